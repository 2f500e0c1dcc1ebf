#!/usr/bin/env python3
"""
Setup script for flowmarket.
"""

from setuptools import setup
from pathlib import Path

# Read the README file
this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(
    name="flowmarket",
    version="1.0.0",
    description="Build, solve and audit network market clearing problems for revenue adequacy",
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="flowmarket developers",
    author_email="",
    url="",
    package_dir={"": "src"},
    py_modules=[
        "audit",
        "case_generator",
        "case_io",
        "cli",
        "formulations",
        "ipm_solver",
        "model_core",
        "reporting",
        "simplex_oracle",
        "star_verify",
        "utils",
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.9",
    install_requires=[
        "pandas>=2.2.2",
        "openpyxl>=3.1.5",
        "numpy>=1.21.0",
        "scipy>=1.9",
        "networkx>=2.8",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov>=2.0",
            "hypothesis>=6.0",
            "black>=21.0",
            "flake8>=3.8",
            "mypy>=0.800",
        ],
    },
    entry_points={
        "console_scripts": [
            "flowmarket=cli:main",
        ],
    },
    include_package_data=True,
    zip_safe=False,
    keywords="optimal power flow, gas network, market clearing, revenue adequacy, interior point",
    project_urls={
        "Bug Reports": "",
        "Source": "",
        "Documentation": "",
    },
)
