import sys

from strata_alloc.cli import main

sys.exit(main())
