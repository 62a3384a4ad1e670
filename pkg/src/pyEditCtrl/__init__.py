"""__init__"""  # pylint: disable=invalid-name

# *******************************************************************************
# Copyright (c) NewTec GmbH 2025 - 2026   -   www.newtec.de
# *******************************************************************************

from .version import __version__, __author__, __email__, __repository__, __license__
