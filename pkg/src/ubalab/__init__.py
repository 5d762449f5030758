"""Target-user injection attack laboratory for collaborative-filtering recommenders.

Modules:

* ``dataset``   -- ingestion, implicit mapping, k-core filtering, target selection
* ``cf``        -- matrix factorization / light graph CF training and ranking
* ``pathcount`` -- bipartite walk counting, the path-count proxy, correlation reports
* ``attackers`` -- fake-user profile generators
* ``uplift``    -- treatment-effect tables (simulated and proxy estimators)
* ``allocator`` -- knapsack budget allocation and baselines
* ``evaluator`` -- HR/NDCG/MRR evaluation of attacks
* ``defense``   -- fake-user detectors and post-defense evaluation
* ``synth``     -- seeded synthetic datasets
* ``pipeline``  -- experiment configuration, staged pipeline, caching, manifests
* ``cli``       -- command-line entry point
"""

__version__ = "0.1.0"
