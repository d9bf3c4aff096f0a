"""The case-study applications: ad serving, timelines, a ticket shop and a news reader."""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..client import Library, Operation
from ..core import Correctable, ErrorKind, View, create_correctable, same_value
from ..sim import SimClock

log = logging.getLogger(__name__)


# -- reference lists (ads, timelines) -----------------------------------------

def encode_refs(refs) -> bytes:
    return b",".join(refs)


def decode_refs(raw: Optional[bytes]) -> list[bytes]:
    return raw.split(b",") if raw else []


def gather(lib: Library, ops: list, clock: SimClock) -> Correctable:
    """Run ``ops`` in parallel at the strongest level; closes with the list of results."""
    top = lib.levels[-1]
    out, completer = create_correctable([top], lib.diagnostics)
    if not ops:
        completer.close_final(View([], top, arrival_time=clock.now))
        return out
    results: list = [None] * len(ops)
    remaining = [len(ops)]

    def one(i: int, c: Correctable):
        def on_final(value):
            results[i] = value
            remaining[0] -= 1
            if remaining[0] == 0:
                completer.close_final(View(list(results), top, arrival_time=clock.now))

        def on_error(err):
            # a failed item is reported as missing; the gather itself still completes
            log.debug("gathered item %d failed: %s", i, err)
            on_final(None)

        c.set_callbacks(on_final=on_final, on_error=on_error)

    for i, op in enumerate(ops):
        one(i, lib.invoke_strong(op))
    return out


@dataclass
class SpecStats:
    runs: int = 0
    aborts: int = 0


def fetch_referenced(lib: Library, index_key: bytes, clock: SimClock, speculative: bool = True,
                     stats: Optional[SpecStats] = None) -> Correctable:
    """Read a list of references, then every referenced object.

    Speculatively, the objects are prefetched from the preliminary list and
    only refetched if the final list differs.  Without speculation the list is
    read at the strongest level first and the objects fetched afterwards.
    """
    stats = stats if stats is not None else SpecStats()

    def fetch(raw):
        stats.runs += 1
        return gather(lib, [Operation.read(ref) for ref in decode_refs(raw)], clock)

    def abort(_pending):
        stats.aborts += 1

    index_read = Operation.read(index_key)
    if speculative:
        return lib.invoke(index_read).speculate(fetch, abort)
    return lib.invoke_strong(index_read).speculate(fetch, abort)


def profile_key(user: int) -> bytes:
    return b"profile:%d" % user


def ad_key(ad: int) -> bytes:
    return b"ad:%d" % ad


def timeline_key(user: int) -> bytes:
    return b"timeline:%d" % user


def tweet_key(tweet: int) -> bytes:
    return b"tweet:%d" % tweet


def ads_fetch(lib: Library, user: int, clock: SimClock, speculative: bool = True,
              stats: Optional[SpecStats] = None) -> Correctable:
    return fetch_referenced(lib, profile_key(user), clock, speculative, stats)


def timeline_get(lib: Library, user: int, clock: SimClock, speculative: bool = True,
                 stats: Optional[SpecStats] = None) -> Correctable:
    return fetch_referenced(lib, timeline_key(user), clock, speculative, stats)


@dataclass
class AdStore:
    profiles: dict[int, list[int]]
    ads: dict[int, bytes]

    @classmethod
    def generate(cls, users: int, ads: int, rng: random.Random, ad_size: int = 100) -> "AdStore":
        payloads = {a: rng.randbytes(ad_size) for a in range(ads)}
        profiles = {u: rng.sample(range(ads), rng.randint(1, min(40, ads))) for u in range(users)}
        return cls(profiles, payloads)

    def items(self) -> dict[bytes, bytes]:
        data = {ad_key(a): payload for a, payload in self.ads.items()}
        for u, refs in self.profiles.items():
            data[profile_key(u)] = encode_refs([ad_key(a) for a in refs])
        return data


@dataclass
class TweetStore:
    timelines: dict[int, list[int]]
    tweets: dict[int, bytes]

    @classmethod
    def generate(cls, users: int, tweets: int, rng: random.Random, per_timeline: int = 20,
                 tweet_size: int = 140) -> "TweetStore":
        bodies = {t: rng.randbytes(tweet_size) for t in range(tweets)}
        timelines = {u: sorted(rng.sample(range(tweets), min(per_timeline, tweets)), reverse=True)
                     for u in range(users)}
        return cls(timelines, bodies)

    def items(self) -> dict[bytes, bytes]:
        data = {tweet_key(t): body for t, body in self.tweets.items()}
        for u, ids in self.timelines.items():
            data[timeline_key(u)] = encode_refs([tweet_key(t) for t in ids])
        return data


# -- ticket shop ---------------------------------------------------------------

class Outcome(enum.Enum):
    CONFIRMED = "confirmed"
    SOLD_OUT = "sold_out"
    FAILED = "failed"


@dataclass
class Purchase:
    retailer: int
    outcome: Optional[Outcome] = None
    ticket: Optional[int] = None
    started: float = 0.0
    latency: float = 0.0
    on_weak: bool = False
    contradicted: bool = False
    attempts: int = 0


@dataclass
class TicketShop:
    stock_size: int
    threshold: int = 20
    sold: list = field(default_factory=list)

    def remaining(self, ticket_nr: int) -> int:
        return self.stock_size - ticket_nr


def ticket_purchase(lib: Library, shop: TicketShop, clock: SimClock, purchase: Purchase,
                    done: Callable[[Purchase], None], icg: bool = True):
    """One purchase attempt: confirm on the weak view while stock is plentiful.

    ``done`` is called when the strong view (or a final failure) is known, so
    callers can chain the next purchase; the customer-facing latency is the
    time the outcome was first decided.
    """
    purchase.attempts += 1
    if purchase.attempts == 1:
        purchase.started = clock.now

    def decide(outcome: Outcome, ticket=None):
        purchase.outcome = outcome
        purchase.ticket = ticket
        purchase.latency = clock.now - purchase.started

    def on_update(item):
        if item is not None and shop.remaining(item.position) > shop.threshold:
            purchase.on_weak = True
            decide(Outcome.CONFIRMED, item.position)

    def on_final(item):
        if item is not None:
            shop.sold.append(item.position)
        if purchase.on_weak:
            if item is None or shop.remaining(item.position) <= shop.threshold:
                purchase.contradicted = True
            purchase.ticket = item.position if item is not None else None
        elif item is not None:
            decide(Outcome.CONFIRMED, item.position)
        else:
            decide(Outcome.SOLD_OUT)
        done(purchase)

    def on_error(err):
        if err.kind is ErrorKind.TIMEOUT and purchase.attempts < 2 and not purchase.on_weak:
            ticket_purchase(lib, shop, clock, purchase, done, icg)
            return
        if purchase.outcome is None:
            decide(Outcome.FAILED)
        done(purchase)

    op = Operation.dequeue()
    c = lib.invoke(op) if icg else lib.invoke_strong(op)
    c.set_callbacks(on_update=on_update, on_final=on_final, on_error=on_error)


# -- news reader ---------------------------------------------------------------

def news_read(lib: Library, key, render: Callable[[object], None]) -> Correctable:
    """Tiered read that re-renders whenever a view brings different content."""
    shown = []

    def refresh(value):
        if shown and same_value(shown[-1], value):
            return
        shown.append(value)
        render(value)

    c = lib.invoke(Operation.read(key))
    c.set_callbacks(on_update=refresh, on_final=refresh)
    return c
