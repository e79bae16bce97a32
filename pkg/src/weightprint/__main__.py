import sys

from weightprint.cli import main

sys.exit(main())
