from setuptools import setup, find_packages

setup(
    name="factsim",
    version="0.1",
    packages=find_packages(exclude=["tests"]),
    package_data={"factsim": ["default_templates/*.svg.j2"]},
    install_requires=[line.split("#")[0].strip() for line in open("requirements.txt")
                      if not line.startswith("#") and line.split("#")[0].strip()],
)
