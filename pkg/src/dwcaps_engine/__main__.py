import sys

from dwcaps_engine.cli import main

sys.exit(main())
