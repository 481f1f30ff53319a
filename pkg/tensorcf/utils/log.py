import logging
import os

from tensorcf.config import config


class Log:
    def __init__(self, name):
        self.name = name
        self.logger = logging.getLogger(name)
        self._debug = None
        self._sync_level()
        self._has_file_handler = False

        if not self.logger.handlers:
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.WARNING)
            console_handler.setFormatter(logging.Formatter('[%(levelname)s] %(name)s - %(message)s'))
            self.logger.addHandler(console_handler)

    def _sync_level(self):
        # 配置可能在导入之后被 get_config 切换
        if self._debug != config.DEBUG:
            self._debug = config.DEBUG
            self.logger.setLevel(logging.DEBUG if self._debug else logging.INFO)

    def _attach_file_handler(self):
        # 日志目录在第一次写入时才创建
        self._sync_level()
        if self._has_file_handler:
            return
        self._has_file_handler = True
        log_dir = config.LOG_DIR
        if not log_dir:
            return
        try:
            os.makedirs(log_dir, exist_ok=True)
            file_handler = logging.FileHandler(os.path.join(log_dir, f'{self.name}.log'), encoding='utf-8')
        except OSError as e:
            self.logger.warning(f"cannot open log file in {log_dir}: {e}")
            return
        file_handler.setLevel(logging.DEBUG)
        formatter = logging.Formatter('[%(asctime)s] [%(levelname)s] - %(message)s')
        file_handler.setFormatter(formatter)
        self.logger.addHandler(file_handler)

    def info(self, message):
        self._attach_file_handler()
        self.logger.info(message)

    def debug(self, message):
        self._attach_file_handler()
        self.logger.debug(message)

    def warning(self, message):
        self._attach_file_handler()
        self.logger.warning(message)

    def error(self, message):
        self._attach_file_handler()
        self.logger.error(message)
