import random

from fedreg.metrics import CountingDecryptor, CountingEval, OpCounter, StorageMeter


def test_counter_merge():
    a = OpCounter(enc=1, dec=2, ct_mul=3, const_mul=4, bits_up=5, bits_down=6)
    b = OpCounter(enc=10, dec=20, ct_mul=30, const_mul=40, bits_up=50, bits_down=60)
    m = a.merged(b)
    assert m.as_dict() == {
        "enc": 11,
        "dec": 22,
        "ct_mul": 33,
        "const_mul": 44,
        "bits_up": 55,
        "bits_down": 66,
    }
    # inputs untouched
    assert a.enc == 1 and b.enc == 10


def test_counting_eval_attributes_ops(key2048):
    pk, sk = key2048
    ev = CountingEval(pk)
    dec = CountingDecryptor(sk)
    rng = random.Random(1)
    c1 = ev.encrypt(11, rng)
    c2 = ev.encrypt(22, rng)
    c3 = ev.add(c1, c2)
    c4 = ev.scalar_mul(c3, 3)
    c5 = ev.add_plain(c4, 1, rng)
    assert dec.decrypt(c5) == (11 + 22) * 3 + 1
    # add_plain counts as a fresh encryption, not a ciphertext product
    assert ev.counter.enc == 3
    assert ev.counter.ct_mul == 1
    assert ev.counter.const_mul == 1
    assert dec.counter.dec == 1


def test_traffic_counts_scale_with_ciphertext_size(key2048):
    pk, _ = key2048
    ev = CountingEval(pk)
    ev.sent(3)
    ev.received(2)
    assert ev.counter.bits_up == 3 * pk.ciphertext_bits
    assert ev.counter.bits_down == 2 * pk.ciphertext_bits


def test_storage_meter_peak():
    m = StorageMeter()
    m.hold("a", 100)
    m.hold("b", 50)
    assert m.peak == 150
    m.release("a")
    m.hold("c", 20)
    assert m.peak == 150  # peak is sticky
