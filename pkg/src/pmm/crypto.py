"""Hash commitments, Merkle trees, signatures, public-key encryption and a
commit-reveal coin flip.

All randomness comes from a caller-owned ``random.Random`` so that runs are
reproducible from a seed. Pass ``rng=None`` to draw from ``os.urandom``
instead.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
from dataclasses import dataclass, field
from typing import Literal, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

DIGEST_SIZE = 32
NONCE_SIZE = 32

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

Digest = bytes
Nonce = bytes


def sha256(data: bytes) -> Digest:
    return hashlib.sha256(data).digest()


def random_bytes(rng: random.Random | None, n: int) -> bytes:
    if rng is None:
        return os.urandom(n)
    return rng.randbytes(n)


def new_nonce(rng: random.Random | None) -> Nonce:
    return random_bytes(rng, NONCE_SIZE)


def commit(nonce: Nonce, item: bytes) -> Digest:
    """Hiding commitment ``H(nonce || item)``."""
    return sha256(bytes(nonce) + bytes(item))


# --------------------------------------------------------------------------
# Merkle trees


def leaf_node(commitment: Digest) -> Digest:
    return sha256(LEAF_PREFIX + commitment)


def inner_node(left: Digest, right: Digest) -> Digest:
    return sha256(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    # (sibling digest, side of the sibling: "L" or "R")
    siblings: tuple[tuple[Digest, Literal["L", "R"]], ...]

    def serialize(self) -> str:
        lines = [f"index {self.leaf_index}"]
        lines += [f"{d.hex()} {side}" for d, side in self.siblings]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "MerkleProof":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("index "):
            raise ValueError("merkle proof must start with 'index <i>'")
        index = int(lines[0].split()[1])
        siblings = []
        for ln in lines[1:]:
            hexd, side = ln.split()
            if side not in ("L", "R"):
                raise ValueError(f"bad sibling side {side!r}")
            siblings.append((bytes.fromhex(hexd), side))
        return cls(index, tuple(siblings))


@dataclass
class MerkleTree:
    """Merkle tree over ``(item, nonce)`` leaves.

    ``levels[0]`` holds one leaf digest per item, ``levels[-1]`` the root.
    Odd-width levels are padded by pairing the last node with itself.
    """

    leaves: list[tuple[bytes, Nonce]]
    levels: list[list[Digest]] = field(repr=False)

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels)

    def __len__(self) -> int:
        return len(self.leaves)

    def commitments(self) -> list[Digest]:
        return [commit(nonce, item) for item, nonce in self.leaves]


def _next_level(level: Sequence[Digest]) -> list[Digest]:
    out = []
    for i in range(0, len(level), 2):
        left = level[i]
        right = level[i + 1] if i + 1 < len(level) else level[i]
        out.append(inner_node(left, right))
    return out


def mcommit(items: Sequence[bytes], nonces: Sequence[Nonce]) -> MerkleTree:
    if len(items) != len(nonces):
        raise ValueError(f"{len(items)} items but {len(nonces)} nonces")
    if not items:
        raise ValueError("cannot commit to an empty collection")
    if len(set(nonces)) != len(nonces):
        raise ValueError("nonces must be distinct within one tree")
    if any(len(r) != NONCE_SIZE for r in nonces):
        raise ValueError(f"nonces must be {NONCE_SIZE} bytes")
    levels = [[leaf_node(commit(r, m)) for m, r in zip(items, nonces)]]
    while len(levels[-1]) > 1:
        levels.append(_next_level(levels[-1]))
    return MerkleTree(list(zip(map(bytes, items), map(bytes, nonces))), levels)


def merkle_root(items: Sequence[bytes], nonces: Sequence[Nonce]) -> Digest:
    return mcommit(items, nonces).root


# Root published for an empty dataset, where no tree can be built.
EMPTY_ROOT = sha256(b"")


def dataset_root(items: Sequence[bytes], nonces: Sequence[Nonce]) -> Digest:
    """``merkle_root`` extended to the empty dataset."""
    if not items and not nonces:
        return EMPTY_ROOT
    return merkle_root(items, nonces)


def merkle_prove(tree: MerkleTree, index: int) -> MerkleProof:
    if not 0 <= index < len(tree):
        raise IndexError(f"leaf index {index} out of range for {len(tree)} leaves")
    siblings = []
    pos = index
    for level in tree.levels[:-1]:
        if pos % 2 == 0:
            sib = level[pos + 1] if pos + 1 < len(level) else level[pos]
            siblings.append((sib, "R"))
        else:
            siblings.append((level[pos - 1], "L"))
        pos //= 2
    return MerkleProof(index, tuple(siblings))


def merkle_verify_commitment(root: Digest, commitment: Digest, proof: MerkleProof) -> bool:
    """Check a proof starting from a leaf commitment ``H(nonce || item)``.

    This is the form the authority uses for a disputed receipt, where only the
    commitment is known.
    """
    try:
        node = leaf_node(commitment)
        pos = proof.leaf_index
        if pos < 0:
            return False
        for sib, side in proof.siblings:
            if len(sib) != DIGEST_SIZE:
                return False
            # the side flag must agree with the index bit
            if side == "R" and pos % 2 == 0:
                node = inner_node(node, sib)
            elif side == "L" and pos % 2 == 1:
                node = inner_node(sib, node)
            else:
                return False
            pos //= 2
        return pos == 0 and node == root
    except (TypeError, AttributeError, ValueError):
        return False


def merkle_verify(root: Digest, item: bytes, nonce: Nonce, proof: MerkleProof) -> bool:
    try:
        return merkle_verify_commitment(root, commit(nonce, item), proof)
    except TypeError:
        return False


def max_proof_length(t: int) -> int:
    return math.ceil(math.log2(t)) if t > 1 else 0


# --------------------------------------------------------------------------
# Signatures and public-key encryption


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes = field(repr=False)


class Ed25519Scheme:
    """Default signature scheme. Deterministic signatures, 32-byte keys."""

    name = "ed25519"

    def keygen(self, rng: random.Random | None) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(random_bytes(rng, 32))
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(pk, sk.private_bytes(serialization.Encoding.Raw,
                                            serialization.PrivateFormat.Raw,
                                            serialization.NoEncryption()))

    def sign(self, secret: bytes, msg: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret).sign(msg)

    def verify(self, public: bytes, msg: bytes, sig: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(sig), bytes(msg))
            return True
        except (InvalidSignature, ValueError, TypeError):
            return False


class DecryptionError(Exception):
    pass


class X25519ChaChaScheme:
    """Hybrid encryption: ephemeral X25519 + HKDF-SHA256 + ChaCha20-Poly1305.

    Ciphertext layout: ``ephemeral_pk (32) || aead_nonce (12) || sealed``.
    """

    name = "x25519-chacha20poly1305"
    _info = b"pmm-pke-v1"

    def keygen(self, rng: random.Random | None) -> KeyPair:
        sk = X25519PrivateKey.from_private_bytes(random_bytes(rng, 32))
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(pk, sk.private_bytes(serialization.Encoding.Raw,
                                            serialization.PrivateFormat.Raw,
                                            serialization.NoEncryption()))

    def _key(self, shared: bytes, eph_pk: bytes, recipient_pk: bytes) -> bytes:
        return HKDF(hashes.SHA256(), 32, salt=eph_pk + recipient_pk, info=self._info).derive(shared)

    def encrypt(self, public: bytes, msg: bytes, rng: random.Random | None = None) -> bytes:
        eph = X25519PrivateKey.from_private_bytes(random_bytes(rng, 32))
        eph_pk = eph.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        shared = eph.exchange(X25519PublicKey.from_public_bytes(public))
        nonce = random_bytes(rng, 12)
        sealed = ChaCha20Poly1305(self._key(shared, eph_pk, public)).encrypt(nonce, msg, eph_pk)
        return eph_pk + nonce + sealed

    def decrypt(self, secret: bytes, ct: bytes) -> bytes:
        if len(ct) < 32 + 12 + 16:
            raise DecryptionError("ciphertext too short")
        eph_pk, nonce, sealed = ct[:32], ct[32:44], ct[44:]
        try:
            sk = X25519PrivateKey.from_private_bytes(secret)
            own_pk = sk.public_key().public_bytes(serialization.Encoding.Raw,
                                                  serialization.PublicFormat.Raw)
            shared = sk.exchange(X25519PublicKey.from_public_bytes(eph_pk))
            return ChaCha20Poly1305(self._key(shared, eph_pk, own_pk)).decrypt(nonce, sealed, eph_pk)
        except (InvalidTag, ValueError) as exc:
            raise DecryptionError("authentication failed") from exc


SIGNATURES = Ed25519Scheme()
PKE = X25519ChaChaScheme()


def keygen(rng: random.Random | None) -> KeyPair:
    return SIGNATURES.keygen(rng)


def sign(secret: bytes, msg: bytes) -> bytes:
    return SIGNATURES.sign(secret, msg)


def verify_sig(public: bytes, msg: bytes, sig: bytes) -> bool:
    return SIGNATURES.verify(public, msg, sig)


def pke_keygen(rng: random.Random | None) -> KeyPair:
    return PKE.keygen(rng)


def pke_encrypt(public: bytes, msg: bytes, rng: random.Random | None = None) -> bytes:
    return PKE.encrypt(public, msg, rng)


def pke_decrypt(secret: bytes, ct: bytes) -> bytes:
    return PKE.decrypt(secret, ct)


# --------------------------------------------------------------------------
# Two-party coin flip


class CoinFlipAbort(Exception):
    def __init__(self, party: str):
        super().__init__(f"reveal by {party} does not match its commitment")
        self.party = party


class CoinFlipParty:
    """One side of a commit-then-reveal coin flip.

    Subclass and override :meth:`reveal` to script a cheating party; ``peer``
    is the other side's reveal when this party moves second.
    """

    def __init__(self, name: str, seed: bytes, nonce: Nonce):
        self.name = name
        self.seed = seed
        self.nonce = nonce

    def commitment(self) -> Digest:
        return commit(self.nonce, self.seed)

    def reveal(self, peer: tuple[Nonce, bytes] | None = None) -> tuple[Nonce, bytes]:
        return self.nonce, self.seed


def run_coin_flip(a: CoinFlipParty, b: CoinFlipParty) -> Digest:
    """Commitments are exchanged first, then A reveals, then B reveals."""
    ca, cb = a.commitment(), b.commitment()
    reveal_a = a.reveal()
    reveal_b = b.reveal(reveal_a)
    if commit(*reveal_a) != ca:
        raise CoinFlipAbort(a.name)
    if commit(*reveal_b) != cb:
        raise CoinFlipAbort(b.name)
    return sha256(reveal_a[1] + reveal_b[1])


def coin_flip(party_a_seed: bytes, party_b_seed: bytes, rng: random.Random | None = None) -> Digest:
    a = CoinFlipParty("A", party_a_seed, new_nonce(rng))
    b = CoinFlipParty("B", party_b_seed, new_nonce(rng))
    return run_coin_flip(a, b)


def bits_to_index(bits: Digest, n: int) -> int:
    return int.from_bytes(bits, "big") % n
