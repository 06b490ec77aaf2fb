"""
定数定義モジュール
各モジュールで共通利用する数値パラメータ・許容誤差
"""
import os

# 行列演算
SINGULAR_DETERMINANT_THRESHOLD = 1e-14  # Cramer の公式で逆行列を求める際の |det| 下限
LIPSCHITZ_CONSTANT_D = 3.0  # |det F1 - det F2| <= d(1+|F1|^2+|F2|^2)|F1-F2| の d (n=3)
SUPPORTED_DIMENSIONS = (2, 3)

# 数値微分
FD_RELATIVE_STEP = 1e-6  # 密度勾配の中心差分ステップ 1e-6*(1+|F|)

# エネルギー密度の既定値
DEFAULT_LAME_LAMBDA = 1.0
DEFAULT_LAME_MU = 1.0
DEFAULT_ALPHA_COEF = 1.0
DEFAULT_Q = 2.0
DEFAULT_R = 2.0
DEFAULT_S = 2.0
DEFAULT_P = 2.0
DEFAULT_COERCIVITY_C = 0.01
LIPSCHITZ_SAFETY_FACTOR = 1.1  # サンプリングで推定した Lipschitz 定数に掛ける余裕係数
CONVEXITY_CHECK_SAMPLES = 32  # GradPolyDensity 生成時の中点凸性チェック数

# Young 測度
WEIGHT_SUM_TOLERANCE = 1e-12
BARYCENTER_TOLERANCE = 1e-8
JENSEN_RANDOM_SHIFTS = 4  # Jensen チェックで使う F -> |F-B| の B の個数

# 積層（ラミネート）探索
LAMINATE_DIRECTIONS = 64  # a, b それぞれの方向数
LAMINATE_LAMBDA_POINTS = 33  # λ の格子点数（区間内部）
LAMINATE_AMPLITUDE_POINTS = 8  # 振幅の粗い格子点数
LAMINATE_BEAM_WIDTH = 4  # 振幅を精密化する候補数
LAMINATE_DEFAULT_DEPTH = 3
LAMINATE_IMPROVEMENT_TOL = 1e-14

# セル問題
CELL_DEFAULT_SUBDIVISIONS = 16
CELL_PENALTY_START = 10.0
CELL_PENALTY_FACTOR = 10.0
CELL_PENALTY_LOOPS = 5
CELL_INNER_TOLERANCE = 1e-10
CELL_MAX_ITERATIONS = 500
CELL_SEED_NOISE = 1e-3  # 鞍点から抜けるための初期摂動
FEASIBILITY_MARGIN = 1e-12

# 境界での放射極限（外挿）
RADIAL_LIMIT_EPS0 = 0.1
RADIAL_LIMIT_STEPS = 7  # ε_j = 2^{-j} ε0, j = 0..6
RADIAL_LIMIT_FIT_POINTS = 3

# 有限要素・最適化
LBFGS_HISTORY = 10
LBFGS_TOLERANCE = 1e-8
LBFGS_MAX_ITERATIONS = 2000
ARMIJO_C1 = 1e-4
BACKTRACK_FACTOR = 0.5
MIN_STEP = 1e-20
DET_SAFEGUARD_RATIO = 1e-3  # 試行点で det <= 1e-3 * (現在の min det) なら棄却
DEFAULT_PENALTY = 1e4  # minimize 内のロッキング制約ペナルティ β

# 球・行列式制約付き問題のペナルティ継続
CONSTRAINED_PENALTY_START = 10.0
CONSTRAINED_PENALTY_FACTOR = 10.0
CONSTRAINED_PENALTY_LOOPS = 5
CONSTRAINED_INNER_TOLERANCE = 1e-4  # 最初の外側ループの内側許容誤差
CONSTRAINED_TOLERANCE_FACTOR = 0.1
CONSTRAINED_FEASIBILITY_TOL = 1e-8
RESTORATION_BISECTION_STEPS = 60

# 並列評価
MAX_WORKERS_THREAD_POOL = int(os.environ.get("ELASTICITY_MAX_WORKERS", "4"))
THREAD_TIMEOUT_SECONDS = None  # 計算タスクは打ち切らない

# 出力
CSV_FLOAT_FORMAT = "{:.17g}"
VTK_MAGIC_LINE = "# vtk DataFile Version 3.0"

# 特異な立方体変形（example51 サブコマンド）
EXAMPLE51_GAUSS_POINTS = 4  # 1軸あたりの Gauss 点数
EXAMPLE51_DEFAULT_T = 100.0
EXAMPLE51_SUP_SAMPLES = 9  # W^{1,∞} ノルム評価の1軸あたりサンプル数
