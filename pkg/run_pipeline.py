#!/usr/bin/env python3
"""
Script to run the pipeline from a checkout without installing the package.
"""
import sys

from comp_oc.main import main

if __name__ == "__main__":
    sys.exit(main())
