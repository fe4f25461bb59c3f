import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.fspath.basename == "test_acceptance.py":
        label = getattr(item.function, "criterion", item.name)
        verdict = "PASS" if report.passed else "FAIL"
        capman = item.config.pluginmanager.getplugin("capturemanager")
        if capman:
            with capman.global_and_fixture_disabled():
                print(f"\nACCEPTANCE {label}: {verdict}")
        else:
            print(f"\nACCEPTANCE {label}: {verdict}")
