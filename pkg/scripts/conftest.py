"""pytest 設定：註冊 slow 標記（端到端訓練測試）"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 需要錄製示範並訓練策略的端到端測試")
