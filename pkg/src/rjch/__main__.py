import sys

from rjch.cli import main

sys.exit(main())
