"""Synthetic chains with ground truth, for tests, demos and benchmarks.

Each generator returns a :class:`SynthChain`: fixture blocks (ready for
:func:`chainlens.fixtures.write_fixture` or ``write_block_file``) plus the
facts the generator knows independently of any ingest code: true entity of
each address, which outputs are change, planted motifs, and simple counts.
"""

import random
from dataclasses import dataclass, field

from . import wire
from .fixtures import FixtureBlock, FixtureTx
from .model import (multisig_script, p2pk_script, p2pkh_script, p2sh_script)

COIN = 100_000_000
SUBSIDY = 50 * COIN
OP_RETURN_SCRIPT = bytes.fromhex("6a0b68656c6c6f20776f726c64")


@dataclass
class Key:
    """One spendable identity; ``form`` picks the script template."""
    form: str
    secret: bytes
    owner: int

    def script(self, rng=None) -> bytes:
        if self.form == "pubkey":
            # same key paid as P2PK or P2PKH must map to one address
            if rng is not None and rng.random() < 0.2:
                return p2pk_script(self.secret)
            return p2pkh_script(wire.hash160(self.secret))
        if self.form == "p2pkh":
            return p2pkh_script(self.secret)
        if self.form == "p2sh":
            return p2sh_script(self.secret)
        if self.form == "multisig":
            keys = [self.secret[i:i + 33] for i in range(0, len(self.secret), 33)]
            return multisig_script(min(2, len(keys)), keys)
        if self.form == "p2wpkh":
            return b"\x00\x14" + self.secret
        raise ValueError(self.form)


@dataclass
class SynthChain:
    blocks: list = field(default_factory=list)
    owner: dict = field(default_factory=dict)  # script bytes -> entity id
    change_outputs: set = field(default_factory=set)  # (txid_hex, vout)
    planted: list = field(default_factory=list)
    facts: dict = field(default_factory=dict)

    @property
    def n_txs(self):
        return sum(len(b.txs) for b in self.blocks)

    @property
    def n_inputs(self):
        """Non-coinbase inputs, counted while generating."""
        return self.facts.get("noncoinbase_inputs", 0)

    def txid_hex(self, block_index, tx_index):
        b = self.blocks[block_index]
        return b.txs[tx_index].txid_hex(b.height)


class _Builder:
    def __init__(self, seed, start_time=1_300_000_000, block_interval=600):
        self.rng = random.Random(seed)
        self.chain = SynthChain()
        self.time = start_time
        self.interval = block_interval
        self.block = None
        self.inputs = 0
        self.links = 0

    def new_key(self, owner, forms=None):
        rng = self.rng
        forms = forms or (("pubkey", 0.25), ("p2pkh", 0.5), ("p2sh", 0.12), ("multisig", 0.06), ("p2wpkh", 0.07))
        r, acc = rng.random(), 0.0
        form = forms[-1][0]
        for f, w in forms:
            acc += w
            if r < acc:
                form = f
                break
        if form == "pubkey":
            secret = bytes((2 + rng.getrandbits(1),)) + rng.randbytes(32)
        elif form == "multisig":
            secret = b"".join(bytes((2,)) + rng.randbytes(32) for _ in range(3))
        else:
            secret = rng.randbytes(20)
        return Key(form, secret, owner)

    def start_block(self, coinbase_outs):
        height = len(self.chain.blocks)
        self.block = FixtureBlock(height, self.time)
        self.time += self.interval
        cb = FixtureTx(outs=coinbase_outs)
        self.block.txs.append(cb)
        self.chain.blocks.append(self.block)
        return cb

    def add_tx(self, ins, outs):
        tx = FixtureTx(ins=list(ins), outs=list(outs))
        self.block.txs.append(tx)
        self.inputs += len(ins)
        return tx

    def txid(self, tx):
        return tx.txid_hex(self.block.height)

    def done(self):
        self.chain.facts["noncoinbase_inputs"] = self.inputs
        self.chain.facts["spend_links"] = self.inputs
        return self.chain


def random_chain(n_txs=200, seed=0, n_entities=20, txs_per_block=10, p_multi=0.3,
                 p_reuse=0.4, p_change=0.85, p_opreturn=0.03, block_interval=600,
                 start_time=1_300_000_000, forms=None, premine=()) -> SynthChain:
    """Entity-based wallet simulation.

    Every non-coinbase tx spends UTXOs of a single entity (1 input, or 2-4
    with probability ``p_multi``), pays another entity at a reused or fresh
    address, and usually returns change to a fresh address of the payer.
    ``n_txs`` counts non-coinbase transactions. ``premine`` outputs are
    appended to the first coinbase and never spent by the simulation.
    """
    b = _Builder(seed, start_time, block_interval)
    rng = b.rng
    keys = {e: [] for e in range(n_entities)}
    utxos = {e: [] for e in range(n_entities)}  # (txid, vout, value, key)

    def fresh(e):
        k = b.new_key(e, forms)
        keys[e].append(k)
        return k

    def pay_script(key):
        s = key.script(rng)
        b.chain.owner[s] = key.owner
        return s

    made = 0
    while made < n_txs:
        miner = rng.randrange(n_entities)
        mk = fresh(miner)
        extra = list(premine) if not b.chain.blocks else []
        cb = b.start_block([(SUBSIDY, pay_script(mk))] + extra)
        utxos[miner].append((b.txid(cb), 0, SUBSIDY, mk))
        for _ in range(txs_per_block):
            if made >= n_txs:
                break
            funded = [e for e in range(n_entities) if utxos[e]]
            payer = rng.choice(funded)
            pool = utxos[payer]
            k = 1
            if rng.random() < p_multi and len(pool) > 1:
                k = rng.randint(2, min(4, len(pool)))
            picks = sorted(rng.sample(range(len(pool)), k), reverse=True)
            spent = [pool.pop(i) for i in picks]
            total = sum(u[2] for u in spent)
            fee = rng.randint(0, min(50_000, total // 10))
            avail = total - fee
            payee = rng.randrange(n_entities)
            if payee == payer:
                payee = (payee + 1) % n_entities
            has_change = rng.random() < p_change and avail > 1
            amount = rng.randint(1, avail - 1) if has_change else avail
            if keys[payee] and rng.random() < p_reuse:
                pkey = rng.choice(keys[payee])
            else:
                pkey = fresh(payee)
            outs = [(amount, pay_script(pkey))]
            owners = [(payee, pkey)]
            change_pos = None
            if has_change:
                ckey = fresh(payer)
                change_pos = len(outs)
                outs.append((avail - amount, pay_script(ckey)))
                owners.append((payer, ckey))
            if rng.random() < 0.5:
                outs_order = list(range(len(outs)))
                rng.shuffle(outs_order)
                outs = [outs[i] for i in outs_order]
                owners = [owners[i] for i in outs_order]
                if change_pos is not None:
                    change_pos = outs_order.index(change_pos)
            if rng.random() < p_opreturn:
                outs.append((0, OP_RETURN_SCRIPT))
                owners.append((None, None))
            tx = b.add_tx([(u[0], u[1]) for u in spent], outs)
            txid = b.txid(tx)
            if change_pos is not None:
                b.chain.change_outputs.add((txid, change_pos))
            for vout, ((owner, key), (value, _)) in enumerate(zip(owners, outs)):
                if owner is not None:
                    utxos[owner].append((txid, vout, value, key))
            made += 1
    return b.done()


def merged_payment_chain() -> SynthChain:
    """Outsider pays C; C's owner spends A, B and C together to a service.

    Four transactions in two blocks. Entities: 0 = owner of A/B/C,
    1 = outsider, 2 = service, 3 = miner.
    """
    b = _Builder(3)
    det = random.Random(3)
    a, bb, c, outsider, service, miner = (p2pkh_script(det.randbytes(20)) for _ in range(6))
    b.chain.owner.update({a: 0, bb: 0, c: 0, outsider: 1, service: 2, miner: 3})
    cb0 = b.start_block([(30 * COIN, outsider), (10 * COIN, a), (10 * COIN, bb)])
    cb0_id = b.txid(cb0)
    pay_c = b.add_tx([(cb0_id, 0)], [(15 * COIN, c), (15 * COIN - 10_000, outsider)])
    b.start_block([(SUBSIDY, miner)])
    b.add_tx([(cb0_id, 1), (cb0_id, 2), (pay_c.txid_hex(0), 0)],
             [(35 * COIN - 20_000, service)])
    chain = b.done()
    chain.facts["scripts"] = {"A": a, "B": bb, "C": c, "outsider": outsider,
                              "service": service, "miner": miner}
    return chain


def ransom_collection(n_victims=60, seed=0, group=6, p_second_payment=0.1) -> SynthChain:
    """One-time ransom addresses, later consolidated in linked multi-input txs.

    Each consolidation pays back to the last payment address of its group,
    which is spent again alongside the next group, chaining the groups.

    A few victims split the ransom into two outputs to the same address, so
    per-tx de-duplication matters for degree counts.
    ``facts['cluster_scripts']`` is the true operator cluster.
    """
    b = _Builder(seed, block_interval=3600)
    rng = b.rng
    victims = [p2pkh_script(rng.randbytes(20)) for _ in range(n_victims)]
    exchange = p2pkh_script(rng.randbytes(20))
    operator = set()
    received = []  # (txid, vout, value, script)
    victim_utxo = []
    per_block = 10
    for i in range(0, n_victims, per_block):
        cb = b.start_block([(SUBSIDY // per_block, s) for s in victims[i:i + per_block]])
        victim_utxo += [(b.txid(cb), j, SUBSIDY // per_block) for j in range(len(victims[i:i + per_block]))]
    prev = None
    pending = []
    miner = p2pkh_script(rng.randbytes(20))
    for (vtxid, vout, value), vscript in zip(victim_utxo, victims):
        if len(b.block.txs) >= per_block:
            b.start_block([(SUBSIDY, miner)])
        pay = p2pkh_script(rng.randbytes(20))
        operator.add(pay)
        ransom = 300 * COIN // 1000
        outs = [(ransom, pay), (value - ransom - 5_000, vscript)]
        if rng.random() < p_second_payment:
            outs = [(ransom // 2, pay), (ransom // 2, pay), (value - ransom - 5_000, vscript)]
        tx = b.add_tx([(vtxid, vout)], outs)
        txid = b.txid(tx)
        for vo, (v, s) in enumerate(outs):
            if s == pay:
                pending.append((txid, vo, v))
        received.append(pay)
        if len(received) % group == 0:
            total = sum(p[2] for p in pending)
            ins = [(p[0], p[1]) for p in pending]
            if prev is not None:
                ins.append((prev[0], prev[1]))
                total += prev[2]
            sink = pay
            ctx = b.add_tx(ins, [(total - 10_000, sink)])
            prev = (b.txid(ctx), 0, total - 10_000)
            pending = []
    if pending or prev:
        ins = [(p[0], p[1]) for p in pending] + ([(prev[0], prev[1])] if prev else [])
        total = sum(p[2] for p in pending) + (prev[2] if prev else 0)
        b.add_tx(ins, [(total - 10_000, exchange)])
    chain = b.done()
    chain.facts["cluster_scripts"] = operator
    chain.facts["seed_script"] = received[0]
    return chain


def planted_peels(n_chains=5, lengths=(4, 9), noise_txs=300, noise_floor=3, seed=0) -> SynthChain:
    """Peeling chains hidden among noise.

    Noise transactions have 1-3 outputs; runs of 2-output noise transactions
    forming chain links are capped at ``noise_floor`` so chains of length
    ``noise_floor + 1`` or more are exactly the planted ones.
    ``planted`` holds each planted chain as a list of txid hex strings.
    """
    if lengths[0] <= noise_floor:
        raise ValueError("planted chains must be longer than the noise floor")
    b = _Builder(seed)
    rng = b.rng

    def script():
        return p2pkh_script(rng.randbytes(20))

    # pool entries: (txid, vout, value, depth). depth counts the run of chain
    # links ending at the creating tx, or -1 for outputs of non-2-output txs.
    pool = []
    peels = []
    for _ in range(n_chains):
        cb = b.start_block([(SUBSIDY, script())])
        peels.append({"prev": (b.txid(cb), 0, SUBSIDY), "left": rng.randint(*lengths), "txids": []})
    noise_left = noise_txs
    while noise_left > 0 or any(p["left"] for p in peels):
        cb = b.start_block([(SUBSIDY, script())])
        pool.append((b.txid(cb), 0, SUBSIDY, -1))
        for _ in range(8):
            active = [p for p in peels if p["left"]]
            if active and (noise_left <= 0 or rng.random() < 0.3):
                p = rng.choice(active)
                txid, vout, value = p["prev"]
                payment = value // rng.randint(20, 60)
                fee = 1_000
                outs = [(value - payment - fee, script()), (payment, script())]
                if rng.random() < 0.5:
                    outs.reverse()
                tx = b.add_tx([(txid, vout)], outs)
                tid = b.txid(tx)
                p["txids"].append(tid)
                p["left"] -= 1
                cont = 0 if outs[0][0] > outs[1][0] else 1
                p["prev"] = (tid, cont, outs[cont][0])
                # the payment output is spent later by a 1-output sweep at most
                pool.append((tid, 1 - cont, outs[1 - cont][0], None))
            elif noise_left > 0 and pool:
                spent = pool.pop(rng.randrange(len(pool)))
                txid, vout, value, depth = spent
                if value < 10_000:
                    continue  # dust stays unspent
                n_out = rng.choice((1, 2, 3))
                if depth is None or (n_out == 2 and depth is not None and depth + 1 >= noise_floor):
                    n_out = rng.choice((1, 3))
                fee = 1_000
                parts = _split(rng, value - fee, n_out)
                tx = b.add_tx([(txid, vout)], [(v, script()) for v in parts])
                tid = b.txid(tx)
                new_depth = (depth + 1 if depth is not None and depth >= 0 else 0) if n_out == 2 else -1
                for vo, v in enumerate(parts):
                    pool.append((tid, vo, v, new_depth))
                noise_left -= 1
    chain = b.done()
    chain.planted = [p["txids"] for p in peels]
    chain.facts["noise_floor"] = noise_floor
    return chain


def _split(rng, total, n):
    if n == 1 or total < n:
        return [total] + [0] * (n - 1) if n > 1 else [total]
    cuts = sorted(rng.sample(range(1, total), n - 1))
    return [b - a for a, b in zip([0] + cuts, cuts + [total])]


def planted_high_fees(n_txs=300, planted=(2 * COIN, 5 * COIN, 291 * COIN), seed=0,
                      block_interval=4 * 3600) -> SynthChain:
    """Random low-fee traffic plus transactions paying the given large fees.

    ``planted`` on the result lists the big-fee txids, one per requested fee,
    each placed in a random later block.
    """
    rng = random.Random(seed + 1)
    premine = [(f + COIN, p2pkh_script(rng.randbytes(20))) for f in planted]
    chain = random_chain(n_txs=n_txs, seed=seed, block_interval=block_interval,
                         txs_per_block=6, premine=premine)
    first = chain.blocks[0]
    cb_txid = first.txs[0].txid_hex(0)
    base = len(first.txs[0].outs) - len(premine)
    positions = sorted(rng.sample(range(1, len(chain.blocks)), len(planted)))
    for k, pos in enumerate(positions):
        blk = chain.blocks[pos]
        tx = FixtureTx(ins=[(cb_txid, base + k)], outs=[(COIN, p2pkh_script(rng.randbytes(20)))])
        blk.txs.append(tx)
        chain.planted.append(tx.txid_hex(blk.height))
    chain.facts["noncoinbase_inputs"] += len(planted)
    chain.facts["spend_links"] = chain.facts["noncoinbase_inputs"]
    return chain


def daily_rates(chain: SynthChain, seed=0, lo=100, hi=1000):
    """One USD/BTC rate per UTC day covering the chain, 8 fractional digits."""
    import datetime
    from decimal import Decimal

    rng = random.Random(seed)
    t0 = chain.blocks[0].time
    t1 = chain.blocks[-1].time
    d = datetime.datetime.fromtimestamp(t0, datetime.timezone.utc).date()
    end = datetime.datetime.fromtimestamp(t1, datetime.timezone.utc).date()
    rows = []
    while d <= end:
        cents = rng.randint(lo * 10**8, hi * 10**8)
        rows.append((d, Decimal(cents).scaleb(-8)))
        d += datetime.timedelta(days=1)
    return rows
