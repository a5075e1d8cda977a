import pytest

from codesift.teacher_client import FewShotExample, FewShotPrompt

# The three seed (question, program) pairs with hand-evaluated answers.
# program 1: t0=120, t1=90, answer=(90-10)/2 = 40
# program 2: t0=8, t1=32, answer=32/2 = 16
# program 3: t0=26, t1=5, t2=0.75, t3=2, t4=12, t5=14, t6=42, t7=21, t8=9,
#            answer=26+9 = 35
SEED_EXAMPLES = (
    (
        "The total average age of three friends is 40. Jared is ten years older "
        "than Hakimi, and Molly's age is 30. How old is Hakimi?",
        "n0 = 40\nn1 = 10\nn2 = 30\nt0 = 3 * n0\nt1 = t0 - n2\nanswer = (t1 - n1) / 2",
        40.0,
    ),
    (
        "A carpenter worked alone for 1 day on a job that would take him 7 more "
        "days to finish. He and another carpenter completed the job in 4 more "
        "days. How many days would it have taken the second carpenter to do the "
        "complete job working alone?",
        "n0 = 1.0\nn1 = 7.0\nn2 = 4.0\nt0 = n0 + n1\nt1 = n2 * t0\nanswer = t1 / 2.0",
        16.0,
    ),
    (
        "In two alloys, copper and tin are related in the ratios of 4 : 1 and "
        "1 : 3. 10 kg of 1st alloy, 16 kg of the 2nd alloy and some pure copper "
        "are melted together. An alloy is obtained in which the ratio of copper "
        "and tin was 3 : 2 . Find the weight of the new alloy.",
        "n0 = 4.0\nn1 = 1.0\nn2 = 1.0\nn3 = 3.0\nn4 = 10.0\nn5 = 16.0\nn6 = 2.0\n"
        "n7 = 3.0\nn8 = 2.0\nt0 = n4 + n5\nt1 = n0 + n1\nt2 = n3 / n0\nt3 = n4 / t1\n"
        "t4 = n5 * t2\nt5 = t3 + t4\nt6 = n3 * t5\nt7 = t6 / n6\nt8 = t7 - t4\n"
        "answer = t0 + t8",
        35.0,
    ),
)


@pytest.fixture
def seed_prompt() -> FewShotPrompt:
    return FewShotPrompt(
        tuple(FewShotExample(q, p) for q, p, _ in SEED_EXAMPLES)
    )
