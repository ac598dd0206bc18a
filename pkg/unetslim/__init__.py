"""Define module attributes.

- Defining packaging attributes accessed by pyproject.toml
- Making reading functions available at module level

"""
import warnings

try:
    from unetslim.tensorarray import TensorArray
except ImportError:
    warnings.warn("Cannot import accessors at the main module level")


__version__ = "0.1.0"


def _import_functions(pkgname="input", prefix="read"):
    """Import functions from pkgname with defined prefix at module level.

    Functions are imported here if:
        - they are defined in a module unetslim.{pkgname}.{name}
        - they are named as {prefix}_{name}

    Example:
        - unetslim.input.mvdt.read_mvdt
        - unetslim.input.frames.read_frames

    """
    import os
    import glob
    from importlib import import_module

    here = os.path.dirname(os.path.abspath(__file__))
    for filename in sorted(glob.glob(os.path.join(here, pkgname, "*.py"))):
        module = os.path.splitext(os.path.basename(filename))[0]
        if module == "__init__":
            continue
        func_name = f"{prefix}_{module}"
        try:
            globals()[func_name] = getattr(
                import_module(f"unetslim.{pkgname}.{module}"), func_name
            )
        except Exception as exc:
            warnings.warn(f"Cannot import reading function {func_name} because:\n{exc}")


_import_functions(pkgname="input", prefix="read")
