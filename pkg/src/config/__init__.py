# 导入环境变量配置
from dotenv import load_dotenv
load_dotenv() # 确保只加载一次

# 导入其他配置

from src.config.env_config import *
from src.config.render_config import *
from src.config.yaml_loader import *
