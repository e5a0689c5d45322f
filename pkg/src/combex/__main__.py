from combex.cli import main

main()
