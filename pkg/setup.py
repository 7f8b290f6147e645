from setuptools import setup, find_packages

setup(
    name='groundmotion',
    version='0.3.0',
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    package_data={
        'groundmotion': ['configs/*.yaml'],
    },
    install_requires=[
        'numpy',
        'torch',
        'PyYAML',
        'tqdm',
        'rich',
        'pytest' # For development/testing purposes
    ],
    entry_points={
        'console_scripts': [
            'groundmotion=groundmotion.main:main',
        ],
    },
    description='Motion priors with continuous human-ground interaction, and latent-space motion fitting.',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
    ],
    python_requires='>=3.9',
)
