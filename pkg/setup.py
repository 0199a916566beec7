from setuptools import Extension, setup

# Optional: without a C compiler the pure-Python cell backend is used.
setup(ext_modules=[Extension("fsgme._cells", ["src/fsgme/_cells.c"], optional=True)])
