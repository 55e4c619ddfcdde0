import contextlib
from importlib.metadata import PackageNotFoundError, version

from . import analytic, cli, config, drivers, hedging, lattice, market, pde

with contextlib.suppress(PackageNotFoundError):
    __version__ = version("fairrange")
