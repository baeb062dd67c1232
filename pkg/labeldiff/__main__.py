import sys

from labeldiff.cli import main

sys.exit(main())
