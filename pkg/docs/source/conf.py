import os
import sys
from importlib.metadata import PackageNotFoundError, version

sys.path.insert(0, os.path.abspath('../../'))

project = 'ccpdml'
copyright = '2026, ccpdml developers'
author = 'ccpdml developers'
try:
    release = version('ccpdml')
except PackageNotFoundError:
    release = '0.1.0'

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax',
    "sphinx_gallery.gen_gallery",
]

autosummary_generate = True
autodoc_member_order = 'bysource'
autodoc_typehints = 'none'
napoleon_numpy_docstring = True
napoleon_google_docstring = False

html_theme = "pydata_sphinx_theme"
html_title = f"ccpdml {release}"
html_theme_options = {
    "show_prev_next": False,
    "navbar_end": ["theme-switcher", "navbar-icon-links"],
}

# ccp_training trains a network for a few thousand steps; it is rendered
# without being executed.
sphinx_gallery_conf = {
    "examples_dirs": "gallery",
    "gallery_dirs": "examples",
    "filename_pattern": r"/(norm_clip|greedy_k_center|map_at_r)\.py$",
    "within_subsection_order": "FileNameSortKey",
    "reference_url": {"ccpdml": None},
}
