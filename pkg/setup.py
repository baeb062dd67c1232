import setuptools

setuptools.setup(
    name='labeldiff',
    version='0.1.1',
    description='Image classification by denoising diffusion in label space, with dual-granularity guidance',
    long_description=open('README.md', 'rt').read(),
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(exclude=['tests']),
    python_requires='>=3.9',
    install_requires=[
        'matplotlib',
        'numpy',
        'pandas',
        'Pillow',
        'PyYAML',
        'scikit-learn',
        'scipy',
        'torch',
        'torchvision',
        'tqdm',
    ],
    extras_require={
        'tests': ['pytest'],
    },
    entry_points={
        'console_scripts': ['labeldiff=labeldiff.cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
    ],
)
