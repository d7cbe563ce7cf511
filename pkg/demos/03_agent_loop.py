"""One event through the three agents, then two evaluator rounds and the effect on the analyser."""

import json

import numpy as np

from eventflow.agents import LogicStore, MockBackend, compute_error_patterns, render_query, run_evaluator, run_pipeline
from eventflow.datamodel import SynthConfig, synth_generate

world = synth_generate(SynthConfig(days=21), seed=0)
venues = {"V0": "Harbor Arena", "V1": "Civic Hall", "V2": "Riverside Park"}
event = world.events[3]
store = LogicStore()
backend = MockBackend()

result = run_pipeline(event, world.events, world.tweets, store, backend, venues)
print("queries:")
for q in result.queries:
    print("  ", render_query(q))
print(f"matched {len(result.matched_tweets)} posts")
print("contexts:", json.dumps(result.context().category_texts, indent=2))

# pretend evaluation: this venue's evening windows did badly
metas = [
    {"weekday": event.date.strftime("%A"), "time_slot": f"{event.start_time.hour:02d}:00", "event_type": list(event.categories), "venue": event.venue_id},
    {"weekday": "Tuesday", "time_slot": "12:00", "event_type": ["Celebration"], "venue": "V9"},
]
stats = compute_error_patterns([np.full(12, 20.0), np.full(12, 2.0)], [np.zeros(12)] * 2, metas)
for _ in range(2):
    run_evaluator(stats, store, backend, venues)
    print(f"\nlogic revision {store.revision}; venue logic for {event.venue_id}:")
    print(store.logic_venue.get(event.venue_id, "(none)"))

after = run_pipeline(event, world.events, world.tweets, store, backend, venues)
print("\ntraffic text before:", result.mobility.traffic_conditions)
print("traffic text after: ", after.mobility.traffic_conditions)
print("history revisions:", [h["revision"] for h in store.history])
