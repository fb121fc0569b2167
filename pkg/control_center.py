#!/usr/bin/env python3
"""
DecompGrind Control Center
研磨工作台互動介面：以子行程執行 scripts/grind_tracker.py 的各項指令
"""

import os
import subprocess
import sys
from pathlib import Path

import questionary
from rich import print as rprint
from rich.panel import Panel
from rich.text import Text

sys.path.insert(0, str(Path(__file__).parent / "scripts"))

from grind_workpieces import STANDARD_WORKPIECES


TRACKER = str(Path(__file__).parent / "scripts" / "grind_tracker.py")
METHODS = ["Proposed", "CSP-Hyb", "Rand-Hyb", "BCIL-full", "BCIL-all", "Demo-Speed-1", "Demo-Speed-2"]
SUITES = ["single-removal", "full-grind", "convergence", "training-data", "all"]
BACK = "🔙 返回主選單"


def clear_screen():
    os.system('cls' if os.name == 'nt' else 'clear')


def show_header():
    clear_screen()
    title = Text("DecompGrind Control Center", style="bold cyan")
    subtitle = Text("分解式研磨模擬工作台", style="yellow")

    panel = Panel(
        Text.assemble(title, "\n", subtitle),
        border_style="blue",
        padding=(1, 2)
    )
    rprint(panel)


def run_tracker(*args: str, pause: bool = True) -> int:
    """執行 grind_tracker.py 子指令並回傳結束碼"""
    try:
        result = subprocess.run([sys.executable, TRACKER, *args])
    except KeyboardInterrupt:
        return 130
    if result.returncode != 0:
        rprint(f"[bold red]指令結束碼 {result.returncode}[/bold red]")
    if pause:
        input("\n按 Enter 繼續...")
    return result.returncode


def ask_workpiece(message: str = "選擇工件:"):
    return questionary.select(message, choices=list(STANDARD_WORKPIECES)).ask()


def ask_seed() -> str:
    return questionary.text("亂數種子:", default="0").ask() or "0"


def workpiece_menu():
    """工件與規劃子選單"""
    while True:
        action = questionary.select(
            "請選擇工件功能:",
            choices=[
                "🧱 產生工件點雲 (Generate Workpiece)",
                "🧭 規劃切削平面 (Plan Surfaces)",
                BACK
            ]
        ).ask()

        if action in (None, BACK):
            break

        name = ask_workpiece()
        if not name:
            continue
        seed = ask_seed()
        if action.startswith("🧱"):
            run_tracker("gen-workpiece", "--workpiece", name, "--seed", seed)
        elif action.startswith("🧭"):
            horizon = questionary.select("規劃時域 H:", choices=["1", "2", "3"], default="2").ask()
            if horizon:
                run_tracker("plan", "--workpiece", name, "--seed", seed, "--horizon", horizon)


def policy_menu():
    """示範與策略訓練子選單"""
    while True:
        action = questionary.select(
            "請選擇策略功能:",
            choices=[
                "🎥 錄製示範 (Record Demonstrations)",
                "🧠 訓練策略 (Train Policy)",
                BACK
            ]
        ).ask()

        if action in (None, BACK):
            break

        if action.startswith("🎥"):
            out = questionary.text("輸出目錄:", default="demos").ask()
            if out:
                run_tracker("demo", "--out", out)
        elif action.startswith("🧠"):
            demos = questionary.text("示範目錄:", default="demos/episodes").ask()
            out = questionary.text("模型輸出:", default="models/lcfa.pt").ask()
            if demos and out:
                run_tracker("train", "--demos", demos, "--out", out)


def grind_menu():
    """研磨一個工件"""
    name = ask_workpiece("選擇要研磨的工件:")
    if not name:
        return
    method = questionary.select("選擇方法:", choices=METHODS).ask()
    if not method:
        return
    args = ["grind", "--workpiece", name, "--method", method, "--seed", ask_seed()]
    if method == "Proposed" or method.startswith("BCIL"):
        model = questionary.text("策略模型（留空則重新訓練）:", default="models/lcfa.pt").ask()
        if model:
            args += ["--model", model]
    if method.startswith("Demo-Speed"):
        demos = questionary.text("示範目錄:", default="demos/episodes").ask()
        if demos:
            args += ["--demos", demos]
    if name.startswith("WP-S") and questionary.confirm("只做一次水平移除?", default=True).ask():
        args.append("--single")
    run_tracker(*args)


def bench_menu():
    """基準實驗"""
    suite = questionary.select("選擇基準套組:", choices=SUITES).ask()
    if not suite:
        return
    seeds = questionary.text("種子列表:", default="1,2,3").ask()
    args = ["bench", "--suite", suite]
    if seeds:
        args += ["--seeds", seeds]
    rprint(Panel(Text("基準實驗可能需要數分鐘以上", style="yellow"), border_style="yellow"))
    run_tracker(*args)


def main():
    while True:
        show_header()

        choice = questionary.select(
            "請選擇工具:",
            choices=[
                "🧱 工件與規劃 (Workpieces & Planning)",
                "🧠 示範與策略 (Demonstrations & Policy)",
                "⚙️  研磨工件 (Grind)",
                "📊 基準實驗 (Benchmark)",
                "❌ 離開 (Exit)"
            ]
        ).ask()

        if choice in (None, "❌ 離開 (Exit)"):
            rprint("[bold yellow]再見！[/bold yellow]")
            break

        elif choice.startswith("🧱"):
            workpiece_menu()

        elif choice.startswith("🧠"):
            policy_menu()

        elif choice.startswith("⚙️"):
            grind_menu()

        elif choice.startswith("📊"):
            bench_menu()


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        rprint("\n[bold yellow]程式中斷[/bold yellow]")
        sys.exit(0)
