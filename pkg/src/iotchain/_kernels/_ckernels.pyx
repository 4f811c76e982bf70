# cython: language_level=3
"""Compiled hash kernels (OpenSSL-backed).

Byte-for-byte equivalent to ``_pykernels``; the test suite cross-checks the
two backends. Only the inner loops live here: one-shot SHA-256, the Merkle
fold and the proof-of-work nonce scan.
"""

from libc.stdlib cimport free, malloc
from libc.string cimport memcmp, memcpy

cdef extern from "openssl/evp.h" nogil:
    ctypedef struct EVP_MD:
        pass
    const EVP_MD *EVP_sha256()
    int EVP_Digest(const void *data, size_t count, unsigned char *md,
                   unsigned int *size, const EVP_MD *type, void *impl)

BACKEND = "c"

DEF DIGEST_LEN = 32
DEF NODE_TAG = 0x01

cdef unsigned long long NONCE_MASK = 0xFFFFFFFFFFFFFFFFULL


cdef inline int _digest(const unsigned char *data, size_t n,
                        unsigned char *out) nogil:
    cdef unsigned int size = 0
    return EVP_Digest(data, n, out, &size, EVP_sha256(), NULL)


def sha256(data: bytes) -> bytes:
    cdef unsigned char out[DIGEST_LEN]
    cdef const unsigned char *buf = data
    cdef size_t n = len(data)
    if _digest(buf, n, out) != 1:
        raise RuntimeError("EVP_Digest failed")
    return out[:DIGEST_LEN]


def merkle_root(leaves) -> bytes:
    cdef Py_ssize_t n = len(leaves)
    if n == 0:
        raise ValueError("merkle_root requires at least one leaf")
    cdef unsigned char *level = <unsigned char *> malloc(n * DIGEST_LEN)
    if level == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    cdef bytes leaf
    for i in range(n):
        leaf = leaves[i]
        if len(leaf) != DIGEST_LEN:
            free(level)
            raise ValueError("leaves must be 32-byte digests")
        memcpy(level + i * DIGEST_LEN, <const unsigned char *> leaf, DIGEST_LEN)

    cdef unsigned char node[1 + 2 * DIGEST_LEN]
    cdef Py_ssize_t parents, left, right
    node[0] = NODE_TAG
    with nogil:
        while n > 1:
            parents = (n + 1) // 2
            for i in range(parents):
                left = 2 * i
                right = left + 1 if left + 1 < n else left
                memcpy(node + 1, level + left * DIGEST_LEN, DIGEST_LEN)
                memcpy(node + 1 + DIGEST_LEN, level + right * DIGEST_LEN, DIGEST_LEN)
                _digest(node, 1 + 2 * DIGEST_LEN, level + i * DIGEST_LEN)
            n = parents

    cdef bytes root = level[:DIGEST_LEN]
    free(level)
    return root


def pow_search(prefix: bytes, threshold: bytes, start_nonce, max_attempts):
    if len(threshold) != 32:
        raise ValueError("threshold must be 32 bytes")
    cdef long long budget = max_attempts
    if budget <= 0:
        raise ValueError("max_attempts must be positive")

    cdef Py_ssize_t plen = len(prefix)
    cdef unsigned char *msg = <unsigned char *> malloc(plen + 8)
    if msg == NULL:
        raise MemoryError()
    memcpy(msg, <const unsigned char *> (<bytes> prefix), plen)

    cdef unsigned char target[DIGEST_LEN]
    memcpy(target, <const unsigned char *> (<bytes> threshold), DIGEST_LEN)

    cdef unsigned long long nonce = <unsigned long long> (start_nonce & NONCE_MASK)
    cdef unsigned char out[DIGEST_LEN]
    cdef long long attempt = 0
    cdef int j, found = 0
    with nogil:
        while attempt < budget:
            attempt += 1
            for j in range(8):
                msg[plen + j] = <unsigned char> ((nonce >> (8 * (7 - j))) & 0xFF)
            _digest(msg, plen + 8, out)
            if memcmp(out, target, DIGEST_LEN) < 0:
                found = 1
                break
            nonce = (nonce + 1) & NONCE_MASK
    free(msg)
    if found:
        return nonce, attempt
    return None, max_attempts
