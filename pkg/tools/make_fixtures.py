"""Generate the bundled fixture corpus (run once; outputs are committed).

Every quantity downstream tests assert about this corpus (retention counts,
captions, vote outcomes) follows by hand from the mock backend rules plus
the timings laid out here: sentence k spans [20000k, 20000k + len_ms] and
word j of a sentence starts at sentence_start + 2000j and lasts 1500 ms.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"


def build(video_id, sentence_texts, sentence_len_ms, duration_ms):
    sentences, words = [], []
    for k, text in enumerate(sentence_texts):
        start = 20000 * k
        sentences.append(
            {"text": text, "t_start_ms": start, "t_end_ms": start + sentence_len_ms}
        )
        for j, word in enumerate(text.split()):
            w_start = start + 2000 * j
            words.append(
                {"text": word, "t_start_ms": w_start, "t_end_ms": w_start + 1500}
            )
    return {
        "video_id": video_id,
        "duration_ms": duration_ms,
        "sentences": sentences,
        "words": words,
    }


FIXTURES = [
    {
        "meta": {
            "video_id": "vid_chole_01",
            "title": "Laparoscopic gallbladder removal, narrated",
            "procedure_type": "laparoscopic cholecystectomy",
            "fps": 30.0,
            "source": "public",
            "duration_ms": 160000,
        },
        "sentence_len_ms": 19000,
        "sentences": [
            "welcome to this video presentation",
            "we will discuss the procedure",
            "we grasp the gallbladder fundus",
            "the cystic duct is exposed",
            "we clip the cystic artery",
            "then we dissect the tissue plane",
            "the gallbladder is freed from the liver bed",
            "thank you for watching this video",
        ],
        "scenes": [
            {"t_start_ms": 0, "t_end_ms": 40000,
             "content": "presenter slide title lecture room"},
            {"t_start_ms": 40000, "t_end_ms": 160000,
             "content": "surgical field tissue grasper laparoscopic view"},
        ],
    },
    {
        "meta": {
            "video_id": "vid_hyst_02",
            "title": "Total hysterectomy teaching case",
            "procedure_type": "laparoscopic hysterectomy",
            "fps": 25.0,
            "source": "private",
            "duration_ms": 120000,
        },
        "sentence_len_ms": 18000,
        "sentences": [
            "we retract the uterus gently",
            "the bladder flap is developed",
            "we ligate the uterine artery",
            "careful dissection protects the ureter",
            "the team repositions the operating table",
            "thanks everyone for joining today",
        ],
        "scenes": [
            {"t_start_ms": 0, "t_end_ms": 90000,
             "content": "surgical field uterus tissue retraction"},
            {"t_start_ms": 90000, "t_end_ms": 120000,
             "content": "operating room staff discussion presenter"},
        ],
    },
    {
        "meta": {
            "video_id": "vid_colec_03",
            "title": "Sigmoid colectomy highlights",
            "procedure_type": "laparoscopic colectomy",
            "fps": 60.0,
            "source": "public",
            "duration_ms": 80000,
        },
        "sentence_len_ms": 18000,
        "sentences": [
            "we mobilize the sigmoid colon",
            "the mesentery is divided with cautery",
            "a stapler divides the bowel",
            "we check hemostasis of the tissue",
        ],
        # 13 of 24 sampled frames of task 0 land before 20000 ms: vote is
        # surgical by exactly one frame (the strict-majority boundary).
        "scenes": [
            {"t_start_ms": 0, "t_end_ms": 20000,
             "content": "surgical field tissue laparoscopic"},
            {"t_start_ms": 20000, "t_end_ms": 40000,
             "content": "presentation slide lecture"},
            {"t_start_ms": 40000, "t_end_ms": 80000,
             "content": "surgical field tissue laparoscopic"},
        ],
    },
    {
        "meta": {
            "video_id": "vid_talk_04",
            "title": "Panel discussion on port placement",
            "procedure_type": "surgical education talk",
            "fps": 30.0,
            "source": "public",
            "duration_ms": 40000,
        },
        "sentence_len_ms": 18000,
        "sentences": [
            "the trocar placement is demonstrated",
            "we discuss the incision options",
        ],
        "scenes": [
            {"t_start_ms": 0, "t_end_ms": 40000,
             "content": "conference stage speaker interview audience"},
        ],
    },
    {
        "meta": {
            "video_id": "vid_close_05",
            "title": "",
            "procedure_type": "wound closure demonstration",
            "fps": 24.0,
            "source": "private",
            "duration_ms": 30000,
        },
        "sentence_len_ms": 28000,
        "sentences": [
            "we suture the fascia carefully",
        ],
        "scenes": [
            {"t_start_ms": 0, "t_end_ms": 30000,
             "content": "surgical field tissue suture closeup"},
        ],
    },
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for fx in FIXTURES:
        vid = fx["meta"]["video_id"]
        transcript = build(
            vid, fx["sentences"], fx["sentence_len_ms"], fx["meta"]["duration_ms"]
        )
        (OUT / f"{vid}.meta.json").write_text(
            json.dumps(fx["meta"], indent=2) + "\n", encoding="utf-8"
        )
        (OUT / f"{vid}.transcript.json").write_text(
            json.dumps(transcript, indent=2) + "\n", encoding="utf-8"
        )
        (OUT / f"{vid}.scenes.json").write_text(
            json.dumps(fx["scenes"], indent=2) + "\n", encoding="utf-8"
        )
    print(f"wrote {len(FIXTURES)} fixture videos to {OUT}")


if __name__ == "__main__":
    main()
