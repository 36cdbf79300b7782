from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supportq.core import (
    DialogueState,
    Emotion,
    EmptyEpisode,
    Episode,
    IndexOutOfRange,
    MissingQuery,
    Speaker,
    Stage,
    Strategy,
    StrategyCatalog,
    Transition,
    Turn,
    build_state,
    default_catalog,
    derive_transitions,
)


def seeker(text, emotion=None):
    return Turn(Speaker.SEEKER, text, emotion=emotion)


def supporter(text, strategy=None):
    return Turn(Speaker.SUPPORTER, text, strategy=strategy)


def exchanges(n, annotate=True):
    turns = []
    for i in range(n):
        turns.append(seeker(f"query {i}"))
        turns.append(supporter(f"reply {i}", strategy=(i % 8) + 1 if annotate else None))
    return Episode(description="desc", turns=tuple(turns), session_id="e")


class TestCatalog:
    def test_default_catalog_matches_esconv(self, catalog):
        assert len(catalog) == 8
        assert catalog.by_id(1).name == "Question"
        assert catalog.by_id(1).stage is Stage.I
        assert catalog.by_id(3).stage is Stage.II
        assert catalog.by_id(7).stage is Stage.III
        assert catalog.by_id(8).stage is Stage.NONE
        assert catalog.by_name("reflection of feelings").id == 3
        assert catalog.by_name("  RESTATEMENT   or paraphrasing ").id == 2

    def test_rejects_bad_catalogs(self):
        q = Strategy(1, "Question", "Que.", Stage.I)
        with pytest.raises(ValueError):
            StrategyCatalog((q,))  # K < 2
        with pytest.raises(ValueError):
            StrategyCatalog((q, Strategy(3, "Other", "O", Stage.NONE)))  # gap in ids
        with pytest.raises(ValueError):
            StrategyCatalog((q, Strategy(2, "question", "Q2", Stage.II)))  # dup name
        with pytest.raises(ValueError):
            StrategyCatalog(
                (
                    Strategy(1, "A", "A", Stage.NONE),
                    Strategy(2, "B", "B", Stage.NONE),
                )
            )  # two unstaged


class TestTypes:
    def test_turn_role_constraints(self):
        with pytest.raises(ValueError):
            Turn(Speaker.SEEKER, "hi", strategy=1)
        with pytest.raises(ValueError):
            Turn(Speaker.SUPPORTER, "hi", emotion=Emotion("anger"))

    def test_state_requires_query_and_alternation(self):
        with pytest.raises(ValueError):
            DialogueState("d", Emotion("fear"), (), "")
        with pytest.raises(ValueError):
            DialogueState(
                "d", Emotion("fear"), (seeker("a"), seeker("b")), "q"
            )

    def test_transition_terminal_invariant(self, bare_state):
        with pytest.raises(ValueError):
            Transition(state=bare_state, action=1, terminal=True, next_state=bare_state)
        with pytest.raises(ValueError):
            Transition(state=bare_state, action=1, terminal=False, next_state=None)

    def test_emotion_intensity_range(self):
        with pytest.raises(ValueError):
            Emotion("anger", 6)
        assert Emotion("anger", 5).render() == "anger (intensity: 5)"
        assert Emotion("anger").render() == "anger"


class TestBuildState:
    def test_first_exchange_has_empty_history(self):
        episode = Episode("d", (seeker("q0"), supporter("r0", strategy=1)))
        state = build_state(episode, 0)
        assert state.history == ()
        assert state.query == "q0"

    def test_history_covers_earlier_exchanges_only(self):
        episode = exchanges(3)
        state = build_state(episode, 2)
        assert state.query == "query 2"
        assert [t.text for t in state.history] == ["query 0", "reply 0", "query 1", "reply 1"]

    def test_esconv_style_example(self, catalog):
        episode = Episode(
            description="I hate my job but I am scared to quit and seek a new career.",
            turns=(
                seeker("Seriously! What I'm scare of now is how to secure another job.",
                       emotion=Emotion("anxiety", 5)),
                supporter("I can feel your pain just by chatting with you.",
                          strategy=catalog.by_name("Reflection of Feelings").id),
            ),
            emotion=Emotion("anxiety", 5),
        )
        state = build_state(episode, 0)
        assert state.query.endswith("how to secure another job.")
        assert state.emotion == Emotion("anxiety", 5)
        [tr] = derive_transitions(episode)
        assert tr.action == 3
        assert tr.terminal

    def test_emotion_falls_back_to_session_level(self):
        episode = Episode(
            "d",
            (seeker("q0"), supporter("r0", strategy=1)),
            emotion=Emotion("sadness"),
        )
        assert build_state(episode, 0).emotion.label == "sadness"

    def test_turn_level_emotion_wins(self):
        episode = Episode(
            "d",
            (
                seeker("q0", emotion=Emotion("fear")),
                supporter("r0", strategy=1),
                seeker("q1"),
                supporter("r1", strategy=2),
            ),
            emotion=Emotion("sadness"),
        )
        assert build_state(episode, 0).emotion.label == "fear"
        assert build_state(episode, 1).emotion.label == "fear"  # most recent annotated

    def test_index_errors(self):
        episode = exchanges(2)
        with pytest.raises(IndexOutOfRange):
            build_state(episode, 2)
        with pytest.raises(IndexOutOfRange):
            build_state(episode, -1)

    def test_missing_query(self):
        episode = Episode("d", (supporter("hello", strategy=1),))
        with pytest.raises(MissingQuery):
            build_state(episode, 0)

    def test_leading_supporter_greeting_lands_in_history(self):
        episode = Episode(
            "d",
            (supporter("hello"), seeker("q0"), supporter("r0", strategy=1)),
        )
        state = build_state(episode, 1)
        assert [t.text for t in state.history] == ["hello"]
        assert state.query == "q0"


class TestDeriveTransitions:
    def test_single_supporter_turn_is_terminal(self):
        [tr] = derive_transitions(exchanges(1))
        assert tr.terminal and tr.next_state is None
        assert tr.reward is None
        assert tr.response == "reply 0"

    def test_three_turns_one_terminal(self):
        transitions = derive_transitions(exchanges(3))
        assert len(transitions) == 3
        assert [t.terminal for t in transitions] == [False, False, True]

    def test_transitions_chain(self):
        transitions = derive_transitions(exchanges(4))
        for a, b in zip(transitions, transitions[1:]):
            assert a.next_state == b.state

    def test_unannotated_turns_are_skipped(self):
        episode = Episode(
            "d",
            (
                seeker("q0"),
                supporter("r0", strategy=1),
                seeker("q1"),
                supporter("r1"),  # unannotated
                seeker("q2"),
                supporter("r2", strategy=2),
            ),
        )
        transitions = derive_transitions(episode)
        assert [t.action for t in transitions] == [1, 2]
        assert transitions[0].next_state == transitions[1].state

    def test_empty_episode(self):
        with pytest.raises(EmptyEpisode):
            derive_transitions(exchanges(2, annotate=False))

    def test_count_equals_annotated_supporter_turns(self):
        episode = exchanges(5)
        annotated = sum(1 for t in episode.turns if t.strategy is not None)
        assert len(derive_transitions(episode)) == annotated

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 10), data=st.data())
    def test_no_future_leakage_property(self, n, data):
        annotations = data.draw(
            st.lists(st.one_of(st.none(), st.integers(1, 8)), min_size=n, max_size=n)
        )
        turns = []
        for i, a in enumerate(annotations):
            turns.append(seeker(f"q{i}"))
            turns.append(supporter(f"r{i}", strategy=a))
        episode = Episode("d", tuple(turns))
        if all(a is None for a in annotations):
            with pytest.raises(EmptyEpisode):
                derive_transitions(episode)
            return
        transitions = derive_transitions(episode)
        assert len(transitions) == sum(a is not None for a in annotations)
        assert sum(t.terminal for t in transitions) == 1
        for t in range(n):
            state = build_state(episode, t)
            # the addressed exchange and everything after it stay out of history
            assert f"q{t}" not in [x.text for x in state.history]
            assert all(f"r{j}" not in [x.text for x in state.history] for j in range(t, n))


def test_default_catalog_stage_ranks():
    cat = default_catalog()
    ranks = [s.stage.rank for s in cat]
    assert ranks == [1, 1, 2, 2, 3, 3, 3, None]
