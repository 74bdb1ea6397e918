"""Driving-behavior classification from angular-field images.

Submodules load lazily so the command line can configure threading before
numpy initializes.
"""

__version__ = "0.1.0"

_SUBMODULES = ("autodiff", "gaf", "attention", "vit", "model", "engine",
               "clustering", "data", "metrics", "errors", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
