from setuptools import find_packages, setup

setup(
    name='potwell',
    packages=find_packages(exclude=('tests',)),
    install_requires=[
        'scipy>=1.6',
        'numpy>=1.20',
        'scikit-learn>=1.0',
        'pandas>=1.5',
    ],
    extras_require={
        'tests': ['pytest>=7.0', 'pytest-cov>=4.0'],
        'docs': ['mkdocs>=1.4', 'mkdocs-material>=9.0'],
    },
    entry_points={
        'console_scripts': ['potwell = potwell.harness:main'],
    },
    version='0.1.0',
    description='Potential-well lab for a nonlocal parabolic equation of Choquard type',
    keywords=['potential well', 'Choquard', 'blow-up', 'Nehari manifold', 'spectral methods'],
    classifiers=[]
)
