from setuptools import setup, find_packages

setup(
    name="locsyn",
    version="0.1.0",
    description="Low-order controller synthesis for large-scale plants with reduced- and full-order stability constraints.",
    author="Your Name",
    author_email="your@email.com",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "pydantic>=2.5",
    ],
    extras_require={
        "dev": ["pytest>=7.4", "pytest-asyncio>=0.23"],
    },
    entry_points={
        "console_scripts": ["locsyn=locsyn.cli:main"],
    },
    python_requires=">=3.9",
    include_package_data=True,
    url="",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
