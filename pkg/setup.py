#!/usr/bin/env python

from setuptools import find_packages, setup

setup(
    name="lemmse",
    version="0.1",
    description="Closed-form MMSE estimators constrained to equivariant and local maps, for inverse problems on image datasets",
    packages=find_packages(exclude=["tests"]),
    package_data={"lemmse": ["data/config/*.yaml"]},
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "scipy>=1.7",
        "pandas",
        "pyyaml",
        "tqdm",
        "toolz",
        "lazy-object-proxy",
        "threadpoolctl",
        "pillow",
    ],
    entry_points={
        "console_scripts": [
            "lemmse = lemmse.commands.cli:run",
        ]
    },
)
