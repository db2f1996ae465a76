# Configuration file for the Sphinx documentation builder.
#
# This file does only contain a selection of the most common options. For a
# full list see the documentation:
# http://www.sphinx-doc.org/en/master/config

import os
import re
import sys

sys.path.insert(0, os.path.abspath('..'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.napoleon',
]

autodoc_member_order = 'bysource'
autodoc_typehints = 'none'

intersphinx_mapping = {
    'py': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'waitk.py'
copyright = '2021-present, the waitk.py developers'

version = ''
with open('../waitk/__init__.py') as f:
    version = re.search(r'^__version__\s*=\s*[\'"]([^\'"]*)[\'"]', f.read(), re.MULTILINE).group(1)

release = version

language = 'en'
exclude_patterns = ['_build']
pygments_style = 'friendly'

html_theme = 'basic'
htmlhelp_basename = 'waitk.pydoc'

man_pages = [('index', 'waitk.py', 'waitk.py Documentation', ['the waitk.py developers'], 1)]
