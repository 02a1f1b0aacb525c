from cransim.cli import main
import sys
sys.exit(main())
