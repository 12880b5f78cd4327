from autopkg.cli import main

raise SystemExit(main())
