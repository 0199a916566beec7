/* Flat array of 64-bit shared cells with indivisible read/write/CAS/FAA.
 *
 * Every method runs start to finish without releasing the GIL, so under
 * CPython each call is atomic with respect to other Python threads.  The
 * accesses also go through the compiler's __atomic builtins so they stay
 * sequentially consistent without the GIL.  Growing the array is only done
 * during set-up, before threads share it.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>

typedef struct {
    PyObject_HEAD
    long long *v;
    Py_ssize_t len;
    Py_ssize_t cap;
} Cells;

static int
cell_index(Cells *self, PyObject *obj, Py_ssize_t *out)
{
    Py_ssize_t c = PyLong_AsSsize_t(obj);
    if (c == -1 && PyErr_Occurred())
        return -1;
    if (c < 0 || c >= self->len) {
        PyErr_Format(PyExc_IndexError, "cell %zd out of range", c);
        return -1;
    }
    *out = c;
    return 0;
}

static int
word(PyObject *obj, long long *out)
{
    long long x = PyLong_AsLongLong(obj);
    if (x == -1 && PyErr_Occurred())
        return -1;
    *out = x;
    return 0;
}

static int
nargs_ok(Py_ssize_t nargs, Py_ssize_t want, const char *name)
{
    if (nargs != want) {
        PyErr_Format(PyExc_TypeError, "%s() takes %zd arguments (%zd given)", name, want, nargs);
        return 0;
    }
    return 1;
}

/* read(c, p) -> int */
static PyObject *
Cells_read(Cells *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_ssize_t c;
    if (!nargs_ok(nargs, 2, "read") || cell_index(self, args[0], &c) < 0)
        return NULL;
    return PyLong_FromLongLong(__atomic_load_n(&self->v[c], __ATOMIC_SEQ_CST));
}

/* write(c, value, p) -> None */
static PyObject *
Cells_write(Cells *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_ssize_t c;
    long long x;
    if (!nargs_ok(nargs, 3, "write") || cell_index(self, args[0], &c) < 0 || word(args[1], &x) < 0)
        return NULL;
    __atomic_store_n(&self->v[c], x, __ATOMIC_SEQ_CST);
    Py_RETURN_NONE;
}

/* cas(c, expected, new, p) -> bool */
static PyObject *
Cells_cas(Cells *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_ssize_t c;
    long long expected, desired;
    if (!nargs_ok(nargs, 4, "cas") || cell_index(self, args[0], &c) < 0 ||
        word(args[1], &expected) < 0 || word(args[2], &desired) < 0)
        return NULL;
    if (__atomic_compare_exchange_n(&self->v[c], &expected, desired, 0, __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST))
        Py_RETURN_TRUE;
    Py_RETURN_FALSE;
}

/* faa(c, delta, p) -> previous value */
static PyObject *
Cells_faa(Cells *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_ssize_t c;
    long long delta;
    if (!nargs_ok(nargs, 3, "faa") || cell_index(self, args[0], &c) < 0 || word(args[1], &delta) < 0)
        return NULL;
    return PyLong_FromLongLong(__atomic_fetch_add(&self->v[c], delta, __ATOMIC_SEQ_CST));
}

/* alloc(count, value) -> index of the first new cell */
static PyObject *
Cells_alloc(Cells *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_ssize_t count;
    long long x;
    if (!nargs_ok(nargs, 2, "alloc"))
        return NULL;
    count = PyLong_AsSsize_t(args[0]);
    if (count == -1 && PyErr_Occurred())
        return NULL;
    if (count < 0) {
        PyErr_SetString(PyExc_ValueError, "negative cell count");
        return NULL;
    }
    if (word(args[1], &x) < 0)
        return NULL;
    Py_ssize_t base = self->len;
    if (base + count > self->cap) {
        Py_ssize_t cap = self->cap ? self->cap : 64;
        while (cap < base + count)
            cap *= 2;
        long long *grown = PyMem_Realloc(self->v, (size_t)cap * sizeof(long long));
        if (grown == NULL)
            return PyErr_NoMemory();
        self->v = grown;
        self->cap = cap;
    }
    for (Py_ssize_t i = 0; i < count; i++)
        self->v[base + i] = x;
    self->len = base + count;
    return PyLong_FromSsize_t(base);
}

/* peek(c) -> int, an uncounted read */
static PyObject *
Cells_peek(Cells *self, PyObject *arg)
{
    Py_ssize_t c;
    if (cell_index(self, arg, &c) < 0)
        return NULL;
    return PyLong_FromLongLong(__atomic_load_n(&self->v[c], __ATOMIC_SEQ_CST));
}

/* snapshot() -> tuple of every cell value */
static PyObject *
Cells_snapshot(Cells *self, PyObject *Py_UNUSED(ignored))
{
    PyObject *out = PyTuple_New(self->len);
    if (out == NULL)
        return NULL;
    for (Py_ssize_t i = 0; i < self->len; i++) {
        PyObject *x = PyLong_FromLongLong(self->v[i]);
        if (x == NULL) {
            Py_DECREF(out);
            return NULL;
        }
        PyTuple_SET_ITEM(out, i, x);
    }
    return out;
}

static Py_ssize_t
Cells_len(Cells *self)
{
    return self->len;
}

static void
Cells_dealloc(Cells *self)
{
    PyMem_Free(self->v);
    Py_TYPE(self)->tp_free((PyObject *)self);
}

static PyMethodDef Cells_methods[] = {
    {"read", (PyCFunction)(void (*)(void))Cells_read, METH_FASTCALL, "read(c, p) -> value"},
    {"write", (PyCFunction)(void (*)(void))Cells_write, METH_FASTCALL, "write(c, value, p)"},
    {"cas", (PyCFunction)(void (*)(void))Cells_cas, METH_FASTCALL, "cas(c, expected, new, p) -> bool"},
    {"faa", (PyCFunction)(void (*)(void))Cells_faa, METH_FASTCALL, "faa(c, delta, p) -> previous value"},
    {"alloc", (PyCFunction)(void (*)(void))Cells_alloc, METH_FASTCALL, "alloc(count, value) -> first index"},
    {"peek", (PyCFunction)Cells_peek, METH_O, "peek(c) -> value"},
    {"snapshot", (PyCFunction)Cells_snapshot, METH_NOARGS, "snapshot() -> tuple"},
    {NULL, NULL, 0, NULL},
};

static PySequenceMethods Cells_as_sequence = {
    .sq_length = (lenfunc)Cells_len,
};

static PyTypeObject CellsType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "fsgme._cells.Cells",
    .tp_doc = "Growable array of 64-bit cells with atomic operations.",
    .tp_basicsize = sizeof(Cells),
    .tp_flags = Py_TPFLAGS_DEFAULT,
    .tp_new = PyType_GenericNew,
    .tp_dealloc = (destructor)Cells_dealloc,
    .tp_methods = Cells_methods,
    .tp_as_sequence = &Cells_as_sequence,
};

static struct PyModuleDef cells_module = {
    PyModuleDef_HEAD_INIT,
    .m_name = "fsgme._cells",
    .m_doc = "Atomic word cells for the native memory backend.",
    .m_size = -1,
};

PyMODINIT_FUNC
PyInit__cells(void)
{
    if (PyType_Ready(&CellsType) < 0)
        return NULL;
    PyObject *m = PyModule_Create(&cells_module);
    if (m == NULL)
        return NULL;
    Py_INCREF(&CellsType);
    if (PyModule_AddObject(m, "Cells", (PyObject *)&CellsType) < 0) {
        Py_DECREF(&CellsType);
        Py_DECREF(m);
        return NULL;
    }
    return m;
}
