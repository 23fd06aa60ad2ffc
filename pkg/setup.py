from setuptools import setup, find_packages

setup(
    name="sdm_decoding",
    version="0.1",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    py_modules=["main"],
    install_requires=[
        "numpy>=1.22.0",
        "scipy>=1.9.0",
        "scikit-learn>=1.2.0",
        "pandas>=1.5.0",
        "pyyaml>=6.0.0",
        "jsonschema>=4.20.0",
    ],
    entry_points={
        "console_scripts": ["sdm-decode=main:cli"],
    },
)
