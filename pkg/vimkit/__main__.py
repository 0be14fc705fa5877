import sys

from vimkit.cli import main

sys.exit(main())
