"""Regenerates the bundled test fixtures. Deterministic; run from this directory."""
import collections
import json
import os
import random

from PIL import Image, ImageDraw

HERE = os.path.dirname(os.path.abspath(__file__))
rng = random.Random(7)

ORGANS = ["chest", "brain", "abdomen"]
MODALITY = {"chest": "x-ray", "brain": "mri", "abdomen": "ct"}


def draw(path, organ, abnormal, jitter, size=64):
    img = Image.new("RGB", (size, size), (12, 12, 12))
    d = ImageDraw.Draw(img)
    o = jitter
    if organ == "chest":
        d.ellipse((8 + o, 10, 28 + o, 54), fill=(170, 170, 170))
        d.ellipse((36 - o, 10, 56 - o, 54), fill=(170, 170, 170))
    elif organ == "brain":
        d.ellipse((8, 8 + o, 56, 56 - o), outline=(220, 220, 220), width=6)
        d.ellipse((20, 20, 44, 44), fill=(90, 90, 90))
    else:
        d.rectangle((10 + o, 14, 54 - o, 50), fill=(120, 120, 120))
        d.ellipse((22, 22, 42, 42), fill=(60, 60, 60))
    if abnormal:
        d.ellipse((38, 16, 48, 26), fill=(255, 255, 255))
    os.makedirs(os.path.dirname(path), exist_ok=True)
    if path.endswith(".jpg"):
        img.save(path, quality=95)
    else:
        img.save(path)


def rad():
    root = os.path.join(HERE, "rad")
    train, test = [], []
    qid = 0
    for i in range(12):
        organ = ORGANS[i % 3]
        abnormal = (i // 3) % 2 == 1
        name = f"synpic{i:03d}.png"
        draw(os.path.join(root, "images", name), organ, abnormal, i % 4)
        qs = [
            ("is there an abnormality in the image?", "yes" if abnormal else "no", "CLOSED", "PRES"),
            ("which organ is shown in this image?", organ, "OPEN", "ORGAN"),
            ("what imaging modality is used?", MODALITY[organ], "OPEN", "MODALITY"),
        ]
        for q, a, at, qt in qs:
            qid += 1
            train.append({"qid": qid, "image_name": name, "image_organ": organ, "question": q,
                          "answer": a, "answer_type": at, "question_type": qt, "phrase_type": "freeform"})
        qid += 1
        if i % 2 == 0:
            test.append({"qid": qid, "image_name": name, "image_organ": organ,
                         "question": "is this a normal image?", "answer": "no" if abnormal else "yes",
                         "answer_type": "CLOSED", "question_type": "ABN", "phrase_type": "para"})
        else:
            test.append({"qid": qid, "image_name": name, "image_organ": organ,
                         "question": "what part of the body is imaged?",
                         "answer": organ if i != 11 else "pelvis",
                         "answer_type": "OPEN", "question_type": "ORGAN", "phrase_type": "para"})
    with open(os.path.join(root, "trainset.json"), "w") as f:
        json.dump(train, f, indent=1)
    with open(os.path.join(root, "testset.json"), "w") as f:
        json.dump(test, f, indent=1)


def slake():
    root = os.path.join(HERE, "slake")
    splits = {"train": range(0, 10), "test": range(10, 14)}
    qid = 0
    for split, ids in splits.items():
        records = []
        for i in ids:
            organ = ORGANS[i % 3]
            abnormal = i % 4 == 1
            name = f"xmlab{i}/source.jpg"
            draw(os.path.join(root, "imgs", name), organ, abnormal, i % 3)
            qs = [
                ("Which organ is shown in the image?", organ, "OPEN", "Organ", "en"),
                ("Does the picture contain lung?", "Yes" if organ == "chest" else "No", "CLOSED", "Organ", "en"),
                ("Is this image abnormal?", "Yes" if abnormal else "No", "CLOSED", "Abnormal", "en"),
                ("What modality is used to take this image?", MODALITY[organ].upper() if organ != "chest" else "X-Ray", "OPEN", "Modality", "en"),
                ("图中显示的是哪个器官?", {"chest": "肺", "brain": "脑", "abdomen": "腹部"}[organ], "OPEN", "Organ", "zh"),
            ]
            if i % 2 == 0:
                qs.append(("Where is the organ located in the body?", {"chest": "Chest", "brain": "Head", "abdomen": "Abdomen"}[organ], "OPEN", "Position", "en"))
            for q, a, at, ct, lang in qs:
                qid += 1
                records.append({"img_id": i, "img_name": name, "question": q, "answer": a,
                                "q_lang": lang, "location": organ.capitalize(), "modality": MODALITY[organ],
                                "answer_type": at, "base_type": "vqa", "content_type": ct,
                                "triple": ["vhead", "_", "_"], "qid": qid})
        with open(os.path.join(root, f"{split}.json"), "w") as f:
            json.dump(records, f, indent=1, ensure_ascii=False)


FINDINGS = ["a small nodule", "no acute findings", "a large mass", "mild effusion", "a fracture", "normal anatomy"]
SIDES = ["left", "right"]


def captions():
    root = os.path.join(HERE, "captions")
    texts = []
    for split, n in (("train", 24), ("val", 8)):
        rows = []
        for i in range(n):
            organ = ORGANS[i % 3]
            finding = FINDINGS[(i // 3) % len(FINDINGS)]
            abnormal = finding not in ("no acute findings", "normal anatomy")
            rel = f"images/roco_{split}_{i:03d}.png"
            draw(os.path.join(root, rel), organ, abnormal, i % 4)
            cap = f"{MODALITY[organ]} of the {organ} showing {finding} on the {SIDES[i % 2]} side."
            if i % 5 == 4:
                cap = cap.capitalize() + " Follow-up imaging was recommended after two weeks, 2019."
            rows.append(f"ROCO_{split}_{i:05d}\t{rel}\t{cap}")
            texts.append(cap)
        with open(os.path.join(root, f"{split}.tsv"), "w") as f:
            f.write("\n".join(rows) + "\n")
    return texts


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


def learn_merges(texts, n_merges):
    import regex as re
    pat = re.compile(r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+""", re.IGNORECASE)
    be = bytes_to_unicode()
    words = collections.Counter()
    for t in texts:
        for tok in re.findall(pat, " ".join(t.lower().split())):
            s = "".join(be[b] for b in tok.encode("utf-8"))
            words[tuple(s[:-1]) + (s[-1] + "</w>",)] += 1
    merges = []
    for _ in range(n_merges):
        pairs = collections.Counter()
        for w, c in words.items():
            for a, b in zip(w, w[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        best = max(sorted(pairs), key=lambda p: pairs[p])
        merges.append(best)
        new = collections.Counter()
        for w, c in words.items():
            out, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and (w[i], w[i + 1]) == best:
                    out.append(w[i] + w[i + 1])
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            new[tuple(out)] += c
        words = new
    return merges


def tokenizer(texts):
    merges = learn_merges(texts, 160)
    with open(os.path.join(HERE, "bpe_merges.txt"), "w") as f:
        f.write("#version: 0.2\n")
        for a, b in merges:
            f.write(f"{a} {b}\n")


def glove():
    words = set()
    for path in ("rad/trainset.json", "rad/testset.json", "slake/train.json", "slake/test.json"):
        with open(os.path.join(HERE, path)) as f:
            for r in json.load(f):
                q = r["question"].lower().replace("'s", " 's")
                q = "".join(ch if ch.isalnum() or ch in "'-" else " " for ch in q)
                words.update(q.split())
    words -= {"picture", "imaged", "located"}
    lines = []
    for w in sorted(words):
        if not w.isascii():
            continue
        vec = " ".join(f"{rng.gauss(0, 0.5):.4f}" for _ in range(16))
        lines.append(f"{w} {vec}")
    with open(os.path.join(HERE, "glove_mini_16d.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    rad()
    slake()
    texts = captions()
    tokenizer(texts)
    glove()
