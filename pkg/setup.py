from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [
        line.strip() for line in fh.read().splitlines()
        if line.strip() and not line.startswith("#")
        and not line.startswith(("pytest", "hypothesis"))
    ]

setup(
    name="tiling-predictor",
    version="0.1.0",
    author="Tiling Predictor Team",
    author_email="email@example.com",
    description="Action-conditioned next-frame prediction for driving video with tiled action encoding",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/yourusername/tiling-predictor",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.8",
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-cov>=4.0.0",
            "hypothesis>=6.80",
            "black>=23.0.0",
            "isort>=5.12.0",
            "flake8>=6.0.0",
        ]
    },
    entry_points={
        "console_scripts": [
            "tiling-predictor=tiling_predictor.__main__:main",
        ],
    },
)
