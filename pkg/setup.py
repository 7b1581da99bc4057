from setuptools import Extension, setup

# The compiled distance kernels are optional: resynth.kernels falls back to
# the numpy implementation when the extension is absent.
ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "resynth._distkernels",
        ["src/resynth/_distkernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    pass

setup(ext_modules=ext_modules)
