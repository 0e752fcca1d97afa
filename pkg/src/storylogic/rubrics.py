"""Rating prompts and rubric text, shared verbatim between the automatic
evaluation suite and the annotation service so both ask identical questions.
"""
from __future__ import annotations

INSTANCE_CONSISTENCY_PROMPT = """You are given a story and a sequence of images representing different moments from the story. Your task is to evaluate whether the same characters, key objects, and environments appear consistently and coherently throughout the images.
Please assess the overall instance consistency using the following scale:
1 - Poor: Severe inconsistencies; characters, objects, or environments change drastically without narrative justification.
2 - Fair: Multiple inconsistencies present; noticeable attribute or appearance shifts that harm understanding.
3 - Good: Minor inconsistencies; small differences in appearance or object details, but the overall coherence is mostly maintained.
4 - Very Good: Mostly consistent with only subtle or hard-to-notice differences.
5 - Excellent: Fully consistent; characters, objects, and environments are visually stable and coherent across all frames.
Please provide the rating and a brief justification."""

CHARACTER_EXPRESSIVENESS_PROMPT = """You are given a story and a sequence of images representing different moments from the story. Your task is to evaluate whether the characters' emotions, gestures, and body language are clearly conveyed and appropriate to the narrative context.
Please assess the overall character expressiveness using the following scale:
1 - Poor: Characters appear expressionless or with irrelevant/unintelligible expressions; emotional intent is entirely unclear.
2 - Fair: Characters show limited or inconsistent expressions; emotions are weakly conveyed and often mismatched with the story context.
3 - Good: Characters display some relevant expressions or gestures, but emotional clarity is only partially achieved.
4 - Very Good: Characters are generally expressive and aligned with the narrative; only minor ambiguities remain.
5 - Excellent: Characters are highly expressive; emotions, gestures, and body language are vivid, coherent, and fully aligned with the story context.
Please provide the rating and a brief justification."""

VQA_QUESTION_TEMPLATE = "In this story, after {action}, does {result} happen in the images? (Yes/No)"

RUBRIC_EVENT_PROMPT = """You are shown a story and its generated image sequence. Judge how well the images express the event below on three 0-1 sub-scores: clarity (is the event visually legible), coherence (does it fit the surrounding panels), plausibility (is the depicted outcome believable).
Event: after {action}, {result}.
Reply with lines "clarity: <0-1>", "coherence: <0-1>", "plausibility: <0-1>"."""

READABILITY_INFERENCE_PROMPT = """You are given the character list of a story and captions describing each image of its generated visual sequence, in order. Infer the overall story plot they tell and retell it as a short narrative paragraph. Reply with the narrative only.

Characters: {characters}

Captions:
{captions}"""

AESTHETIC_PROMPT = "Rate the overall aesthetic quality and visual appeal of this image as a preference score. Reply with a single decimal number between 0 and 1."

# Human-rating rubrics, one per dimension; served to annotators verbatim.
HUMAN_RUBRICS: dict[str, str] = {
    "instance_consistency": """Across the entire image sequence, are the main characters or entities visually consistent in terms of identity, clothing, and major attributes?
Please provide a score from 1 to 5, following the scale below, and a brief justification:
1 - Poor: Severe inconsistencies; characters, objects, or environments change drastically without narrative justification.
2 - Fair: Multiple inconsistencies present; noticeable attribute or appearance shifts that harm understanding.
3 - Good: Minor inconsistencies; small differences in appearance or object details, but overall coherence is mostly maintained.
4 - Very Good: Mostly consistent with only subtle or hard-to-notice differences.
5 - Excellent: Fully consistent; characters, objects, and environments remain visually stable and coherent across all frames.""",
    "narrative_causality_vqa": """For each causal question below, answer Yes if the images show the result happening after the action, and No otherwise.""",
    "story_readability": """If you only look at the images without re-reading the text, how clearly can you understand the intended narrative progression?
Please provide a score from 1 to 5, following the scale below, and a brief justification:
1 - Poor: Completely confusing; the story is impossible to follow.
2 - Fair: Very unclear; only fragments of the story are understandable.
3 - Good: Partially clear; the overall idea is somewhat recognizable but many gaps remain.
4 - Very Good: Mostly clear; only minor ambiguities remain.
5 - Excellent: Very clear; the story is easy to follow without text.""",
    "aesthetic_appeal": """Considering the image sequence as a whole, how visually appealing and stylistically coherent are the generated images?
Please provide a score from 1 to 5, following the scale below, and a brief justification:
1 - Poor: Very low quality; unrealistic and inconsistent images.
2 - Fair: Low quality; distracting artifacts or mismatched styles.
3 - Good: Moderate quality; acceptable but with noticeable flaws.
4 - Very Good: High quality; visually appealing with only minor issues.
5 - Excellent: Excellent quality; highly realistic and aesthetically pleasing.""",
}

DIMENSIONS = tuple(HUMAN_RUBRICS)
LIKERT_DIMENSIONS = ("instance_consistency", "story_readability", "aesthetic_appeal")
VQA_DIMENSION = "narrative_causality_vqa"


def vqa_question(action: str, result: str) -> str:
    return VQA_QUESTION_TEMPLATE.format(action=action, result=result)
