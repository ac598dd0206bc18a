"""Access functions to read tensors and clips from data files.

The following structure is expected:
    - Reading functions for each data file type defined in specific modules
    - Modules named as {datatype}.py, e.g. mvdt.py
    - Functions named as read_{dataname}, e.g. read_mvdt

All functions defined with these conventions will be dynamically
imported at the module level

"""
from unetslim.core.exceptions import TensorFileError


def open_binary(filename_or_obj):
    """Bytes from a file name or a binary file object.

    Args:
        - filename_or_obj (str, fileobj): Name of file or file object to read.

    Returns:
        - data (bytes): File content.

    """
    try:
        return filename_or_obj.read()
    except AttributeError:
        try:
            with open(filename_or_obj, "rb") as stream:
                return stream.read()
        except FileNotFoundError as exc:
            raise TensorFileError("File not found", path=filename_or_obj) from exc
