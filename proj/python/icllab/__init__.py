# Copyright 2026 The icllab Authors
# SPDX-License-Identifier: Apache-2.0
"""Hijacking attacks on in-context linear regression (C++ core)."""

from ._icllab import *  # noqa: F401,F403
from ._icllab import __version__  # noqa: F401
