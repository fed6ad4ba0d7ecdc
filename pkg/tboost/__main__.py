from tboost.cli import main

raise SystemExit(main())
