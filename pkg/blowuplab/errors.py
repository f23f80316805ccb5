"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

from __future__ import annotations


class BlowupLabError(Exception):
    """Base class of every error raised by Blowup Lab."""

    def __init__(self, message: str):
        super().__init__(message)


class InputError(BlowupLabError):
    """Raised when user-supplied input (config, expression, argument) is invalid."""


class NumericalFailure(BlowupLabError):
    """Raised when a numerical method fails to meet its tolerance within budget."""


class NumericalWarning(UserWarning):
    """Issued for recoverable numerical events that callers may want to know about."""
