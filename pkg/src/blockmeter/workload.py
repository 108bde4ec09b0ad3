"""User accounts, payload generation, and transaction signing.

All functions are pure in (seed, index): the RNG for each payload or key is
instantiated locally from a derived sub-seed, so repeated calls are
byte-identical and safe under concurrency.
"""

from __future__ import annotations

import random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .model import (
    SignedTransaction,
    TransactionRequest,
    UserAccount,
    WorkloadProfile,
    canonical_bytes,
    derive_seed,
)

SIGNATURE_SCHEME = "ed25519"

SIMPLE_FUNCTIONS = ("create", "read", "update")

# Sample record vocabulary for the simple key-value profile, shaped like the
# stock car-registry demo app (id, make, model, owner).
_MAKES = ("Toyota", "Ford", "Hyundai", "Volkswagen", "Tesla", "Peugeot", "Chery", "Fiat", "Tata", "Holden")
_MODELS = ("Prius", "Mustang", "Tucson", "Passat", "S", "205", "S22L", "Punto", "Nano", "Barina")
_OWNERS = ("Tomoko", "Brad", "Jin Soo", "Max", "Adriana", "Michel", "Aarav", "Pari", "Valeria", "Shotaro")

CPU_HEAVY_PAYLOAD_BYTES = 32


def create_users(n: int, seed: int) -> list[UserAccount]:
    """Create n deterministic signing accounts named user-0 .. user-{n-1}.

    Each keypair is derived from sha256(seed, index), so the same (seed, n)
    always yields byte-identical key material.
    """
    if n < 0:
        raise ValueError("user count must be >= 0")
    users = []
    for index in range(n):
        raw = random.Random(derive_seed(seed, "user-key", index)).randbytes(32)
        private = Ed25519PrivateKey.from_private_bytes(raw)
        public = private.public_key().public_bytes_raw()
        users.append(UserAccount(user_id=f"user-{index}", public_key=public, private_key=raw))
    return users


def account_map(users: list[UserAccount]) -> dict[str, UserAccount]:
    return {u.user_id: u for u in users}


def generate_payload(profile: WorkloadProfile, seed: int, index: int) -> tuple[str, list[str], bytes]:
    """Build the (function, args, payload) triple for one transaction.

    simple      round-robin create/read/update over a 4-field record
    data_heavy  "put" with exactly profile.payload_bytes of pseudorandom data
    cpu_heavy   "compute" carrying the loop count as a decimal arg
    """
    rng = random.Random(derive_seed(seed, "payload", index))
    if profile.kind == "simple":
        function = SIMPLE_FUNCTIONS[index % len(SIMPLE_FUNCTIONS)]
        args = [
            f"REC{index:06d}",
            rng.choice(_MAKES),
            rng.choice(_MODELS),
            rng.choice(_OWNERS),
        ]
        return function, args, b""
    if profile.kind == "data_heavy":
        return "put", [f"blob-{index:06d}"], rng.randbytes(profile.payload_bytes)
    # cpu_heavy: the backend charges per iteration, so the count rides in args.
    return "compute", [str(profile.cpu_iterations)], rng.randbytes(min(profile.payload_bytes, CPU_HEAVY_PAYLOAD_BYTES) or CPU_HEAVY_PAYLOAD_BYTES)


def sign(user: UserAccount, request: TransactionRequest) -> SignedTransaction:
    """Detached signature over the canonical bytes of the request."""
    private = Ed25519PrivateKey.from_private_bytes(user.private_key)
    signature = private.sign(canonical_bytes(request))
    return SignedTransaction(request=request, signature=signature, signer_public_key=user.public_key)


def verify(signed: SignedTransaction) -> bool:
    """True iff the signature verifies; total over malformed key material."""
    try:
        public = Ed25519PublicKey.from_public_bytes(signed.signer_public_key)
        public.verify(signed.signature, canonical_bytes(signed.request))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False
