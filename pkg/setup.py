from setuptools import setup, find_packages
import os

base_version = "0.1.0"
build_timestamp = os.getenv('BUILD_TIMESTAMP', None)

if build_timestamp:
    version = f"{base_version}.{build_timestamp}"
else:
    version = base_version

with open("readme.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="tensorcf",
    version=version,
    description="Matrix completion with tensor-product kernels over user and item attributes",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["test", "test.*"]),
    package_dir={"": "."},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.8',
    license="Apache Software License",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "pandas==2.3.1",
        "psutil==5.9.0",
        "tqdm==4.66.5",
        "openpyxl",
    ],
    extras_require={
        "tests": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": ["tensorcf=tensorcf.api.interface:main"],
    },
    keywords=["matrix-completion", "collaborative-filtering", "kernel-methods", "trace-norm", "movielens"],
)
