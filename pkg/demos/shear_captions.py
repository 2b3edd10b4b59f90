"""
Shearing long captions
======================

Captioners tend to ramble. Shearing keeps the first complete clause that
fits inside a token budget T, and falls back to a hard cut when there is none.
"""

from capforge.shear import Fallback, ShearPolicy, compute_shear_limit, count_tokens, shear_caption

# a long-winded caption, 90 tokens in total
sentence = "The image shows a dog running on a sandy beach near the blue sea."
rambling = " ".join([sentence] * 6)
print(count_tokens(rambling), "tokens before shearing")

policy = ShearPolicy(max_tokens=30)
out = shear_caption(rambling, policy)
print(repr(out.text), count_tokens(out.text), "tokens after")

# "Hi." is too short to count as a clause (3 chars, must be > 5),
# so the first usable clause runs on to the next period
print(shear_caption("Hi. A long second sentence follows here.", policy).text)

# no terminator inside the budget: hard truncation, whitespace collapsed
print(shear_caption("a   caption\twith no end in sight at all", ShearPolicy(max_tokens=4)))

# strict runs can refuse instead
try:
    shear_caption("no clause here", ShearPolicy(fallback=Fallback.REJECT))
except Exception as exc:
    print("rejected:", type(exc).__name__)

# T can also be derived from the raw captions (rounded mean length)
raw = ["a dog on the grass.", "two people ride bikes down a long road at dusk."]
print("T =", compute_shear_limit(raw))
