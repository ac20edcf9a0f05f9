"""adscreen: screening-funnel harness.

Questionnaire rule engine, query-log feature extraction and classification,
closed-loop ad-campaign simulation, OLS inference, and an HTTP funnel
service, behind a single ``adscreen`` CLI.
"""

__version__ = "0.1.0"
