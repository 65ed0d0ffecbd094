#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""The setup script."""
import sys

from setuptools import find_packages, setup


def get_version(filename):
    """Extract the package version"""
    with open(filename, encoding='utf8') as in_fh:
        for line in in_fh:
            if line.startswith('__version__'):
                return line.split('=')[1].strip()[1:-1]
    raise ValueError("Cannot extract version from %s" % filename)


with open('README.rst', encoding='utf8') as readme_file:
    readme = readme_file.read()

try:
    with open('HISTORY.rst', encoding='utf8') as history_file:
        history = history_file.read()
except OSError:
    history = ''

# requirements for use
requirements = [
    'click',
    'glom',
    'grapheme',
    'matplotlib',
    'numpy',
    'scipy',
    'threadpoolctl',
]
if sys.platform != 'linux':
    requirements.append('loky')

# requirements for development (testing, linting)
dev_requirements = [
    'black',
    'coverage',
    'flake8',
    'isort',
    'loky',
    'pre-commit',
    'pylint',
    'pytest',
    'pytest-cov',
    'pytest-xdist',
    'twine',
    'wheel',
]

# some recommended packages that make development nicer
dev_extras = ['jupyterlab', 'pdbpp']

version = get_version('./src/mtbridge/__init__.py')

setup(
    author="mtbridge developers",
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Education',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Operating System :: OS Independent',
        'Topic :: Scientific/Engineering',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Recognition',
    ],
    description=(
        "Multi-target domain adaptation for semantic segmentation on "
        "synthetic benchmarks"
    ),
    python_requires='>=3.8',
    install_requires=requirements,
    extras_require={'dev': dev_requirements, 'extras': dev_extras},
    entry_points={'console_scripts': ['mtbridge=mtbridge.cli:main']},
    license="BSD license",
    long_description=readme + '\n\n' + history,
    long_description_content_type='text/x-rst',
    include_package_data=True,
    keywords='domain adaptation, semantic segmentation, mean teacher',
    name='mtbridge',
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    version=version,
    zip_safe=False,
)
