import sys

from hpppf.cli import main

sys.exit(main())
