/* MurmurHash3_x64_128, after Austin Appleby's public-domain reference.
 * Little-endian block reads; output h1 = low 64 bits, h2 = high 64 bits. */
#ifndef RJCH_MURMUR3_H
#define RJCH_MURMUR3_H

#include <stdint.h>
#include <string.h>

static inline uint64_t rjch_rotl64(uint64_t x, int8_t r) {
    return (x << r) | (x >> (64 - r));
}

static inline uint64_t rjch_fmix64(uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    return k;
}

static inline uint64_t rjch_getblock64(const uint8_t *p) {
    uint64_t v;
    memcpy(&v, p, 8);
#if defined(__BYTE_ORDER__) && (__BYTE_ORDER__ == __ORDER_BIG_ENDIAN__)
    v = __builtin_bswap64(v);
#endif
    return v;
}

static inline void rjch_murmur3_x64_128(const void *key, size_t len, uint32_t seed,
                                        uint64_t *out_h1, uint64_t *out_h2) {
    const uint8_t *data = (const uint8_t *)key;
    const size_t nblocks = len / 16;
    uint64_t h1 = seed;
    uint64_t h2 = seed;
    const uint64_t c1 = 0x87c37b91114253d5ULL;
    const uint64_t c2 = 0x4cf5ad432745937fULL;
    size_t i;

    for (i = 0; i < nblocks; i++) {
        uint64_t k1 = rjch_getblock64(data + i * 16);
        uint64_t k2 = rjch_getblock64(data + i * 16 + 8);

        k1 *= c1; k1 = rjch_rotl64(k1, 31); k1 *= c2; h1 ^= k1;
        h1 = rjch_rotl64(h1, 27); h1 += h2; h1 = h1 * 5 + 0x52dce729;

        k2 *= c2; k2 = rjch_rotl64(k2, 33); k2 *= c1; h2 ^= k2;
        h2 = rjch_rotl64(h2, 31); h2 += h1; h2 = h2 * 5 + 0x38495ab5;
    }

    const uint8_t *tail = data + nblocks * 16;
    uint64_t k1 = 0;
    uint64_t k2 = 0;

    switch (len & 15) {
    case 15: k2 ^= ((uint64_t)tail[14]) << 48; /* fallthrough */
    case 14: k2 ^= ((uint64_t)tail[13]) << 40; /* fallthrough */
    case 13: k2 ^= ((uint64_t)tail[12]) << 32; /* fallthrough */
    case 12: k2 ^= ((uint64_t)tail[11]) << 24; /* fallthrough */
    case 11: k2 ^= ((uint64_t)tail[10]) << 16; /* fallthrough */
    case 10: k2 ^= ((uint64_t)tail[9]) << 8;   /* fallthrough */
    case 9:
        k2 ^= ((uint64_t)tail[8]);
        k2 *= c2; k2 = rjch_rotl64(k2, 33); k2 *= c1; h2 ^= k2;
        /* fallthrough */
    case 8: k1 ^= ((uint64_t)tail[7]) << 56; /* fallthrough */
    case 7: k1 ^= ((uint64_t)tail[6]) << 48; /* fallthrough */
    case 6: k1 ^= ((uint64_t)tail[5]) << 40; /* fallthrough */
    case 5: k1 ^= ((uint64_t)tail[4]) << 32; /* fallthrough */
    case 4: k1 ^= ((uint64_t)tail[3]) << 24; /* fallthrough */
    case 3: k1 ^= ((uint64_t)tail[2]) << 16; /* fallthrough */
    case 2: k1 ^= ((uint64_t)tail[1]) << 8;  /* fallthrough */
    case 1:
        k1 ^= ((uint64_t)tail[0]);
        k1 *= c1; k1 = rjch_rotl64(k1, 31); k1 *= c2; h1 ^= k1;
    }

    h1 ^= (uint64_t)len;
    h2 ^= (uint64_t)len;
    h1 += h2;
    h2 += h1;
    h1 = rjch_fmix64(h1);
    h2 = rjch_fmix64(h2);
    h1 += h2;
    h2 += h1;

    *out_h1 = h1;
    *out_h2 = h2;
}

#endif
