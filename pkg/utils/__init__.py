from . import checksum
from . import coefficients_io
from . import presets_io
from . import records_io

__all__ = ["checksum", "coefficients_io", "presets_io", "records_io"]
