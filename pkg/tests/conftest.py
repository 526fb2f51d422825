import hypothesis

hypothesis.settings.register_profile(
    "speedgrid", deadline=None, max_examples=60,
    suppress_health_check=[hypothesis.HealthCheck.too_slow])
hypothesis.settings.load_profile("speedgrid")
