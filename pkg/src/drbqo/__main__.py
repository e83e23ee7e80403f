import sys

from drbqo.cli import main

sys.exit(main())
