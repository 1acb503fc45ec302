from setuptools import setup

setup(
    name="lates",
    version="0.1.0",
    package_dir={"lates": "src"},
    packages=["lates", "lates.core", "lates.analysis", "lates.refnet"],
    install_requires=[
        "numpy>=1.22",
        "python-dotenv>=0.19.0",
        "tenacity>=8.0.0",
        "pydantic>=2.0.0",
        "typing-extensions>=4.0.0"
    ],
    extras_require={
        "dev": [
            "pytest>=6.0.0",
            "hypothesis>=6.0.0",
            "scipy>=1.8",
            "black>=21.0.0",
            "isort>=5.0.0",
            "mypy>=0.900"
        ]
    },
    entry_points={
        "console_scripts": [
            "lates=lates.cli:main",
        ]
    },
    description="Layer-stack temperature scaling: post-hoc calibration from stacked linear-probe logits",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
)
