import sys

from blockade_gates.cli import main

sys.exit(main())
