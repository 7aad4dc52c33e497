#!/usr/bin/env python3
"""
Setup script for the stack-trace deduplication engine.
"""

from setuptools import setup, find_packages

setup(
    name="trace-dedup",
    version="0.1.0",
    description="Stack-trace deduplication with learned embeddings and a cross-encoder reranker",
    python_requires=">=3.9",
    packages=find_packages(include=["dedup", "dedup.*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.25.0",
        "pandas>=2.1.1",
        "scikit-learn>=1.4.0",
        "torch>=2.3.0",
        "pydantic>=2.5.0",
        "python-dotenv>=1.0.0",
        "pyyaml>=6.0",
        "requests>=2.31.0",
        "tqdm>=4.66.0",
        "psutil>=5.9.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "trace-dedup=dedup.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Developers",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Software Development :: Quality Assurance",
    ],
)
